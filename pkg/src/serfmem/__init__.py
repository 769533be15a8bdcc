"""Numerical model of spin-exchange-immune light storage in a hot alkali vapor."""

__version__ = "0.1.0"
