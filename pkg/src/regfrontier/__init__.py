"""Housing cost frontier and regulatory tax estimation from price/height panels."""

__version__ = "0.1.0"
