"""Event-camera ball detection, trajectory estimation and catch simulation."""

__version__ = "0.1.0"
