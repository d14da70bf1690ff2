"""Starter run documents and the canonical verification suite."""
