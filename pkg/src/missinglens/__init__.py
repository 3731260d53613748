"""Missing-value diagnostics built on additive boosted models."""

__version__ = "0.1.0"
