"""Linear-time operator calculus for functional mixed models."""

__version__ = "0.1.0"
