"""Numerical modules: measures, drifts, path simulation, variational and inequality checks."""
