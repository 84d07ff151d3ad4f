"""HTTP layer exposing the trained models."""

from .app import ApiError, create_app
from .jsonio import dumps_stable
from .state import ServiceState, load_state

__all__ = ["ApiError", "ServiceState", "create_app", "dumps_stable", "load_state"]
