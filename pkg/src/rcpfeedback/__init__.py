"""RCP congestion-control dynamics with and without queue feedback."""

__version__ = "0.1.0"
