"""Queue-aware routing simulator for LEO satellite constellations."""

__version__ = "0.1.0"
