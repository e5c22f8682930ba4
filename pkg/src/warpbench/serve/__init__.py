"""Serving trained checkpoints over REST and MCP (JSON-RPC over stdio)."""
from .core import InferenceService, RecommendRequest, ServeConfig, ServeError, load_aliases
from .mcp import RECOMMEND_TOOL, McpServer, serve_stdio

__all__ = [
    "InferenceService", "McpServer", "RECOMMEND_TOOL", "RecommendRequest", "ServeConfig", "ServeError",
    "create_app", "load_aliases", "serve_stdio",
]


def create_app(service):
    from .rest import create_app as _create

    return _create(service)
