"""priorloc: sensor-prior visual localization and trajectory optimization."""

__version__ = "0.1.0"
