"""mKdV self-similar blow-up numerical lab."""

__version__ = "0.1.0"
