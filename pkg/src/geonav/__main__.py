"""Entry point for ``python -m geonav``."""

from .cli.main import app

if __name__ == "__main__":
    app()
