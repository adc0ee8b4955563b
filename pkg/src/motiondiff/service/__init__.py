"""HTTP service wrapping the core package."""

from .app import Registry, ServiceError, create_app

__all__ = ["Registry", "ServiceError", "create_app"]
