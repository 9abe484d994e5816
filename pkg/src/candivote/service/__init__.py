"""HTTP service wrapping the learner and harness."""

from .app import create_app

__all__ = ["create_app"]
