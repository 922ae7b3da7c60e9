"""Guidance/metrics HTTP sidecar with a deterministic stub mode."""

from .app import ServiceConfig, create_app

__version__ = "0.1.0"
__all__ = ["ServiceConfig", "create_app"]
