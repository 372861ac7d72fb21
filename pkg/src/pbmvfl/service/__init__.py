"""HTTP service wrapping the simulator: accounting, data generation, runs."""

from .app import create_app

__all__ = ["create_app"]
