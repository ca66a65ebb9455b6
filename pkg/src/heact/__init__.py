"""Polynomial activation fitting and hybrid CKKS inference."""

__version__ = "0.1.0"
