"""Byzantine-robust client-weight preprocessing and a deterministic FL simulator."""

__version__ = "0.1.0"
