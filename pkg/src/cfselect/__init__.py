"""Multi-model correlation-filter tracking with a learned model-selection policy."""

__version__ = "0.1.0"
