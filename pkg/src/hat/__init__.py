"""History-aware transformer for personalised outfit compatibility."""

__version__ = "0.1.0"
