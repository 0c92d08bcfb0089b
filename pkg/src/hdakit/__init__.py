"""Hazard detection and avoidance pipeline with synthetic-scene verification tools."""

__version__ = "0.1.0"
