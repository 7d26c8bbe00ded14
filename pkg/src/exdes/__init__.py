"""Expectation-agent fleet monitoring with a deterministic refrigerator twin."""

__version__ = "0.1.0"
