"""MCP tool server: newline-delimited JSON-RPC 2.0 over stdio exposing one ``recommend`` tool."""
from __future__ import annotations

import json
import logging
import sys
from typing import Any, TextIO

from .. import __version__
from .core import InferenceService, RecommendRequest, ServeError

logger = logging.getLogger(__name__)

PARSE_ERROR = -32700
INVALID_REQUEST = -32600
METHOD_NOT_FOUND = -32601
INVALID_PARAMS = -32602
INTERNAL_ERROR = -32603

RECOMMEND_TOOL = {
    "name": "recommend",
    "description": (
        "Rank catalogue items for a known user or for an anonymous session given as a list of item ids "
        "(or display titles). Returns the top_k items with scores."
    ),
    "inputSchema": {
        "type": "object",
        "properties": {
            "model": {"type": "string", "description": "Name of a served model."},
            "user_id": {"type": "string", "description": "Raw id of a known user."},
            "item_sequence": {
                "type": "array",
                "items": {"type": "string"},
                "description": "Raw item ids or titles the user interacted with.",
            },
            "top_k": {"type": "integer", "minimum": 1, "description": "Number of items to return."},
        },
        "required": ["model"],
        "oneOf": [{"required": ["user_id"]}, {"required": ["item_sequence"]}],
        "additionalProperties": False,
    },
}


def _error(id_: Any, code: int, message: str, data: Any = None) -> dict:
    err = {"code": code, "message": message}
    if data is not None:
        err["data"] = data
    return {"jsonrpc": "2.0", "id": id_, "error": err}


def _result(id_: Any, result: Any) -> dict:
    return {"jsonrpc": "2.0", "id": id_, "result": result}


class McpServer:
    def __init__(self, service: InferenceService, protocol_version: str = "2024-11-05", name: str = "warpbench"):
        self.service = service
        self.protocol_version = protocol_version
        self.name = name

    def handle_line(self, line: str) -> str | None:
        """Process one newline-delimited message; returns the serialized response (None for notifications)."""
        try:
            message = json.loads(line)
        except json.JSONDecodeError as exc:
            return json.dumps(_error(None, PARSE_ERROR, f"parse error: {exc.msg}"))
        response = self.handle(message)
        return None if response is None else json.dumps(response)

    def handle(self, message: Any) -> dict | None:
        if not isinstance(message, dict) or message.get("jsonrpc") != "2.0" or not isinstance(message.get("method"), str):
            id_ = message.get("id") if isinstance(message, dict) else None
            return _error(id_, INVALID_REQUEST, "invalid JSON-RPC 2.0 request")
        is_notification = "id" not in message
        id_ = message.get("id")
        method = message["method"]
        params = message.get("params", {})
        if params is None:
            params = {}
        try:
            if not isinstance(params, dict):
                raise _InvalidParams("params must be an object")
            if method == "initialize":
                result = self._initialize(params)
            elif method == "tools/list":
                result = {"tools": [RECOMMEND_TOOL]}
            elif method == "tools/call":
                result = self._call(params)
            elif method == "ping":
                result = {}
            elif method.startswith("notifications/"):
                return None
            else:
                return None if is_notification else _error(id_, METHOD_NOT_FOUND, f"method not found: {method}")
        except _InvalidParams as exc:
            return None if is_notification else _error(id_, INVALID_PARAMS, str(exc))
        except Exception as exc:  # keep the loop alive
            logger.exception("internal error handling %s", method)
            return None if is_notification else _error(id_, INTERNAL_ERROR, f"internal error: {exc}")
        return None if is_notification else _result(id_, result)

    def _initialize(self, params: dict) -> dict:
        return {
            "protocolVersion": self.protocol_version,
            "capabilities": {"tools": {"listChanged": False}},
            "serverInfo": {"name": self.name, "version": __version__},
        }

    def _call(self, params: dict) -> dict:
        name = params.get("name")
        if name != "recommend":
            raise _InvalidParams(f"unknown tool {name!r}")
        args = params.get("arguments", {})
        if not isinstance(args, dict):
            raise _InvalidParams("arguments must be an object")
        extra = set(args) - set(RECOMMEND_TOOL["inputSchema"]["properties"])
        if extra:
            raise _InvalidParams(f"unknown arguments {sorted(extra)}")
        body = {"model": args.get("model")}
        if "user_id" in args:
            body["user_id"] = args["user_id"]
        if "item_sequence" in args:
            body["item_sequence"] = args["item_sequence"]
        if "top_k" in args:
            body["k"] = args["top_k"]
        try:
            req = RecommendRequest.from_mapping(body)
            if req.user_id is None and req.item_sequence is None:
                raise ServeError("bad_request", "give one of 'user_id' and 'item_sequence'", 400)
        except ServeError as exc:
            raise _InvalidParams(exc.message) from exc
        try:
            out = self.service.recommend(req)
        except ServeError as exc:
            # tool-level failure: reported in the result so the agent can react
            return {"content": [{"type": "text", "text": json.dumps(exc.as_dict())}], "isError": True}
        return {
            "content": [{"type": "text", "text": json.dumps(out)}],
            "structuredContent": out,
            "isError": False,
        }


class _InvalidParams(ValueError):
    pass


def serve_stdio(server: McpServer, stdin: TextIO = sys.stdin, stdout: TextIO = sys.stdout) -> None:
    """Strictly sequential loop: one line in, at most one line out."""
    for line in stdin:
        if not line.strip():
            continue
        reply = server.handle_line(line)
        if reply is not None:
            stdout.write(reply + "\n")
            stdout.flush()
