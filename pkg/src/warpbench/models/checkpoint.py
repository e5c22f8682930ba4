"""Self-describing model checkpoints (``.npz`` container, JSON header)."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .. import __version__
from ..ingest import Dataset, IdMap
from .base import ModelConfig, ModelError, Recommender

FORMAT = "warpbench-checkpoint/1"


class CheckpointError(ModelError):
    pass


def save_checkpoint(model: Recommender, path: str | Path) -> Path:
    model._check_fitted()
    path = Path(path)
    train = model.train
    X = train.interactions
    header = {
        "format": FORMAT,
        "engine_version": __version__,
        "family": model.family,
        "hyperparameters": model.config.hyperparameters,
        "idmaps_digest": train.ids_digest(),
        "n_users": train.n_users,
        "n_items": train.n_items,
        "state_fields": list(model.state_fields),
    }
    arrays = {f"state.{k}": np.asarray(v) for k, v in model.state().items()}
    arrays.update({
        "train.indptr": X.indptr,
        "train.indices": X.indices,
        "train.data": X.data,
        "users": np.array(train.user_map.internal_to_raw, dtype=str),
        "items": np.array(train.item_map.internal_to_raw, dtype=str),
        "header": np.array(json.dumps(header, sort_keys=True)),
    })
    if train.timestamps is not None:
        arrays["train.timestamps"] = train.timestamps
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_checkpoint(path: str | Path, expected_idmaps_digest: str | None = None) -> Recommender:
    """Restore a fitted model.

    Raises :class:`CheckpointError` when the stored id maps do not hash to the
    recorded digest or to ``expected_idmaps_digest``.
    """
    from . import REGISTRY

    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    with np.load(path, allow_pickle=False) as z:
        header = json.loads(str(z["header"]))
        if header.get("format") != FORMAT:
            raise CheckpointError(f"{path}: unsupported checkpoint format {header.get('format')!r}")
        user_map = IdMap.from_sequence(z["users"].tolist())
        item_map = IdMap.from_sequence(z["items"].tolist())
        X = sp.csr_matrix(
            (z["train.data"], z["train.indices"], z["train.indptr"]),
            shape=(header["n_users"], header["n_items"]),
        )
        ts = z["train.timestamps"] if "train.timestamps" in z.files else None
        state = {k: z[f"state.{k}"] for k in header["state_fields"]}
    train = Dataset(X, user_map, item_map, ts)
    digest = train.ids_digest()
    if digest != header["idmaps_digest"]:
        raise CheckpointError(f"{path}: id maps do not match the recorded digest")
    if expected_idmaps_digest is not None and digest != expected_idmaps_digest:
        raise CheckpointError(f"{path}: id maps hash mismatch with the evaluation dataset")
    model = REGISTRY[header["family"]](ModelConfig(header["family"], header["hyperparameters"]))
    model.restore(train, state)
    return model
