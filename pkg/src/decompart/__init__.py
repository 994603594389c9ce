"""Source-attributed decomposition of nonlinear compartmental systems."""

__version__ = "0.1.0"
