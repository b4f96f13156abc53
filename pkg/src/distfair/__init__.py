"""Distributional regression with reject-option decisions and group audits."""

__version__ = "0.1.0"
