"""Model-based multi-channel speech enhancement toolkit."""

__version__ = "0.1.0"
