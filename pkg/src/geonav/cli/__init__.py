"""Command-line interface for geonav."""
