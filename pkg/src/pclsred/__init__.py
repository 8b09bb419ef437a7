"""Variable reduction and structured solvers for parametric constrained
least-squares problems."""

__version__ = "0.1.0"
