"""Remaining-useful-life prediction for accelerated laser aging tests."""

__version__ = "0.1.0"

__all__ = ["__version__"]
