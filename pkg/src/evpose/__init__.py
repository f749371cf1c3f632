"""Event-based spacecraft pose estimation pipeline."""

__version__ = "0.1.0"
