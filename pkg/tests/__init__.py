"""Test package for the drift-entropy engine."""
