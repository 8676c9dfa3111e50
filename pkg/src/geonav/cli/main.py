"""Main CLI application for geonav."""

from .commands import app

if __name__ == "__main__":
    app()
