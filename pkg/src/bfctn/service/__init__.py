"""HTTP service exposing the runner as background jobs."""

from .app import create_app

__all__ = ["create_app"]
