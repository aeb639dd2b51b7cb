"""Motion-blur benchmark tooling for visual place recognition."""

__version__ = "0.1.0"
