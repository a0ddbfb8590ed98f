"""HTTP service exposing the seal analysis pipeline."""

from .app import ApiError, create_app

__all__ = ["ApiError", "create_app"]
