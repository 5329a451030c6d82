"""Desk-scale self-refining data flywheel for instruction-following navigation."""

__version__ = "0.1.0"
