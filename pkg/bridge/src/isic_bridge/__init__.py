"""Reference server for the next-token speaker wire protocol."""

from .backend import BridgeBackend, MockTemplateBackend, mock_backend
from .server import BridgeServer, serve

__version__ = "0.1.0"
