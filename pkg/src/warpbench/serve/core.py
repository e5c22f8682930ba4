"""Inference core shared by the REST and MCP front ends."""
from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .. import __version__
from ..models import ModelError, Recommender, UnsupportedQuery, load_checkpoint, recommend, recommend_from_items


class ServeError(Exception):
    """Request-level failure carrying a machine-readable code and an HTTP status."""

    def __init__(self, code: str, message: str, status: int):
        super().__init__(message)
        self.code = code
        self.message = message
        self.status = status

    def as_dict(self) -> dict:
        return {"error": {"code": self.code, "message": self.message}}


@dataclass
class ServeConfig:
    checkpoints: dict[str, str]
    host: str = "127.0.0.1"
    port: int = 8000
    transport: str = "rest"
    default_k: int = 10
    filter_seen: bool = True
    aliases: str | None = None
    protocol_version: str = "2024-11-05"

    def __post_init__(self):
        if not self.checkpoints:
            raise ValueError("serve config needs at least one checkpoint")
        if self.transport not in ("rest", "stdio"):
            raise ValueError(f"unknown transport {self.transport!r}")


def load_aliases(path: str | Path) -> dict[str, str]:
    """Tab-separated ``raw_item_id <TAB> display name`` lines."""
    out = {}
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\r\n")
            if line:
                raw, _, name = line.partition("\t")
                out[raw] = name
    return out


@dataclass
class RecommendRequest:
    model: str
    user_id: str | None = None
    item_sequence: list[str] | None = None
    k: int | None = None
    filter_seen: bool | None = None

    @classmethod
    def from_mapping(cls, body: Any) -> RecommendRequest:
        if not isinstance(body, Mapping):
            raise ServeError("bad_request", "request body must be a JSON object", 400)
        allowed = {"model", "user_id", "item_sequence", "k", "top_k", "filter_seen"}
        if "k" in body and "top_k" in body:
            raise ServeError("bad_request", "give 'k' or its alias 'top_k', not both", 400)
        extra = set(body) - allowed
        if extra:
            raise ServeError("bad_request", f"unknown fields {sorted(extra)}", 400)
        model = body.get("model")
        if not isinstance(model, str) or not model:
            raise ServeError("bad_request", "'model' must be a non-empty string", 400)
        user = body.get("user_id")
        seq = body.get("item_sequence")
        if user is not None and not isinstance(user, (str, int)):
            raise ServeError("bad_request", "'user_id' must be a string", 400)
        if seq is not None and (not isinstance(seq, list) or not all(isinstance(s, (str, int)) for s in seq)):
            raise ServeError("bad_request", "'item_sequence' must be a list of ids", 400)
        if user is not None and seq is not None:
            raise ServeError("bad_request", "give exactly one of 'user_id' and 'item_sequence'", 400)
        k = body.get("k", body.get("top_k"))
        if k is not None and (isinstance(k, bool) or not isinstance(k, int) or k < 1):
            raise ServeError("bad_request", "'k' must be a positive integer", 400)
        fs = body.get("filter_seen")
        if fs is not None and not isinstance(fs, bool):
            raise ServeError("bad_request", "'filter_seen' must be a boolean", 400)
        return cls(
            model,
            None if user is None else str(user),
            None if seq is None else [str(s) for s in seq],
            k,
            fs,
        )


class InferenceService:
    """Read-only holder of the loaded checkpoints."""

    def __init__(self, models: Mapping[str, Recommender], default_k: int = 10, filter_seen: bool = True,
                 aliases: Mapping[str, str] | None = None):
        if not models:
            raise ValueError("no models to serve")
        self.models = dict(models)
        self.default_k = default_k
        self.filter_seen = filter_seen
        self.aliases = dict(aliases or {})
        self._reverse_aliases = {v: k for k, v in self.aliases.items()}
        self.started = time.time()

    @classmethod
    def from_config(cls, cfg: ServeConfig) -> InferenceService:
        models = {name: load_checkpoint(path) for name, path in cfg.checkpoints.items()}
        aliases = load_aliases(cfg.aliases) if cfg.aliases else None
        return cls(models, cfg.default_k, cfg.filter_seen, aliases)

    def inventory(self) -> list[dict]:
        return [
            {
                "name": name,
                "family": m.family,
                "hyperparameters": m.config.hyperparameters,
                "n_users": m.train.n_users,
                "n_items": m.train.n_items,
            }
            for name, m in self.models.items()
        ]

    def health(self) -> dict:
        return {"status": "ok", "engine_version": __version__, "uptime_s": time.time() - self.started,
                "models": len(self.models)}

    def _resolve_item(self, s: str) -> str:
        # display names map back to raw ids; raw ids pass through
        return self._reverse_aliases.get(s, s)

    def _present(self, raw: str) -> dict:
        out = {"item_id": raw}
        if raw in self.aliases:
            out["title"] = self.aliases[raw]
        return out

    def recommend(self, req: RecommendRequest) -> dict:
        t0 = time.perf_counter()
        model = self.models.get(req.model)
        if model is None:
            raise ServeError("unknown_model", f"no model named {req.model!r}", 404)
        k = req.k or self.default_k
        filter_seen = self.filter_seen if req.filter_seen is None else req.filter_seen
        item_map = model.train.item_map
        warnings: list[str] = []
        items: list[tuple[str, float]]

        if req.user_id is not None and req.user_id in model.train.user_map:
            u = model.train.user_map.index(req.user_id)
            recs = recommend(model, np.array([u]), k, filter_seen)
            items = [(item_map.raw(i), s) for i, s in recs.for_user(0)]
        elif req.item_sequence is not None:
            seq = [self._resolve_item(s) for s in req.item_sequence]
            try:
                out = recommend_from_items(model, seq, k)
            except UnsupportedQuery as exc:
                raise ServeError("unsupported_query", str(exc), 422) from exc
            except ModelError as exc:
                raise ServeError("unknown_items", str(exc), 422) from exc
            warnings += [f"unknown item id {s!r} skipped" for s in out.unknown]
            items = [(item_map.raw(i), s) for i, s in zip(out.items, out.scores)]
        elif req.user_id is not None:
            raise ServeError("unknown_user", f"unknown user {req.user_id!r} and no item_sequence given", 422)
        else:
            raise ServeError("bad_request", "give one of 'user_id' and 'item_sequence'", 400)

        return {
            "model": req.model,
            "items": [{**self._present(raw), "score": float(score)} for raw, score in items],
            "warnings": warnings,
            "latency_ms": (time.perf_counter() - t0) * 1000.0,
        }
