"""Test package for geonav."""
