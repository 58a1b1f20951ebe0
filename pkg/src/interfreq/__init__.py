"""Inter-frequency RSRQ prediction with duo-threshold decisions."""

__version__ = "0.1.0"
