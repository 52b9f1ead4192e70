"""HTTP/JSON layer exposing interactive sessions."""

from .app import ServiceBundle, create_app, load_service_bundle

__all__ = ["ServiceBundle", "create_app", "load_service_bundle"]
