"""Numerical core: model, Riccati solvers, strategies, welfare, detection and simulation."""
