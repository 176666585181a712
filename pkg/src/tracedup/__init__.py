"""Stack-trace crash deduplication engine."""

__version__ = "0.1.0"
