"""Correlate per-node I/O traces with the tasks of a scientific workflow."""

__version__ = "0.1.0"
