"""Geonav - a desk-scale geomagnetic navigation lab."""

from .cli.main import app

__version__ = "0.1.0"

__all__ = ["app"]
