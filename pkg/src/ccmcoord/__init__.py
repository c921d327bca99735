"""Coordinated account detection by convergent cross mapping of activity traces."""

__version__ = "0.1.0"
