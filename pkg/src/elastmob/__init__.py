"""Boundary integral solvers for elastance and mobility problems in 2-D."""
__version__ = "0.1.0"
