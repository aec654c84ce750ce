"""Semi-parallel network fusion toolkit."""

__version__ = "0.1.0"
