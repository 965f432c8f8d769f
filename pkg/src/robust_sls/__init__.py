"""Robust distributed controller synthesis from sparse identified models."""

__version__ = "0.1.0"
