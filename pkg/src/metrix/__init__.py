"""Metric-bracket relaxation solvers for fluid and plasma equilibria."""

__version__ = "0.1.0"
