"""Local model gateway speaking the scenewise provider wire contract."""

__version__ = "0.1.0"

from .app import GatewayConfig, create_app

__all__ = ["GatewayConfig", "create_app", "__version__"]
