"""Unfitted Eulerian finite elements for the heat equation on evolving level-set domains."""
__version__ = "0.1.0"
