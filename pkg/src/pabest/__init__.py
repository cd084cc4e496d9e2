"""Network-wide probabilistic available bandwidth estimation."""

__version__ = "0.1.0"
