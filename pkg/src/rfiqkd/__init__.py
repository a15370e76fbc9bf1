"""Handheld reference-frame-independent QKD link simulator and security toolkit."""

__version__ = "0.1.0"
