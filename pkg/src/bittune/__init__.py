"""bittune: bit-level floating-point precision tuning for a small imperative language."""

__version__ = "0.1.0"
