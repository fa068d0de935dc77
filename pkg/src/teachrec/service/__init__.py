from .app import create_app
from .state import ServiceError, ServiceState

__all__ = ["create_app", "ServiceError", "ServiceState"]
