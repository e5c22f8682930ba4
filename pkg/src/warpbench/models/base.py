from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, ClassVar

import numpy as np
import scipy.sparse as sp

from ..ingest import Dataset

FAMILIES = ("mostpop", "random", "itemknn", "userknn", "ease", "bprmf")


class ModelError(ValueError):
    pass


class UnsupportedQuery(ModelError):
    pass


# name -> (type, required, default, check, description of the valid range)
_KNN_PARAMS = {
    "neighbors": (int, True, None, lambda v: v >= 1, ">= 1"),
    "similarity": (str, False, "cosine", lambda v: v in ("cosine", "jaccard"), "cosine|jaccard"),
    "shrinkage": (float, False, 0.0, lambda v: v >= 0, ">= 0"),
}
PARAM_SCHEMA: dict[str, dict[str, tuple]] = {
    "mostpop": {},
    "random": {"seed": (int, False, None, lambda v: True, "integer")},
    "itemknn": _KNN_PARAMS,
    "userknn": _KNN_PARAMS,
    "ease": {
        "l2": (float, True, None, lambda v: v > 0, "> 0"),
        "dense_cap": (int, False, 30_000, lambda v: v >= 1, ">= 1"),
    },
    "bprmf": {
        "factors": (int, True, None, lambda v: v >= 1, ">= 1"),
        "learning_rate": (float, True, None, lambda v: v > 0, "> 0"),
        "regularization": (float, False, 0.0, lambda v: v >= 0, ">= 0"),
        "epochs": (int, True, None, lambda v: v >= 1, ">= 1"),
        "seed": (int, False, None, lambda v: True, "integer"),
    },
}
STOCHASTIC = frozenset({"random", "bprmf"})


@dataclass(frozen=True)
class ModelConfig:
    family: str
    hyperparameters: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in PARAM_SCHEMA:
            raise ModelError(f"unknown model family {self.family!r}; expected one of {FAMILIES}")
        schema = PARAM_SCHEMA[self.family]
        extra = set(self.hyperparameters) - set(schema)
        if extra:
            raise ModelError(f"{self.family}: unknown hyperparameters {sorted(extra)}")
        resolved = {}
        for name, (typ, required, default, check, rng) in schema.items():
            if name not in self.hyperparameters:
                if required:
                    raise ModelError(f"{self.family}: missing hyperparameter {name!r}")
                if default is not None:
                    resolved[name] = default
                continue
            value = self.hyperparameters[name]
            if typ is int and (isinstance(value, bool) or not isinstance(value, (int, np.integer))):
                raise ModelError(f"{self.family}.{name} must be an integer, got {value!r}")
            if typ is float:
                if isinstance(value, bool) or not isinstance(value, (int, float, np.number)):
                    raise ModelError(f"{self.family}.{name} must be a number, got {value!r}")
                value = float(value)
                if not np.isfinite(value):
                    raise ModelError(f"{self.family}.{name} must be finite")
            if typ is str and not isinstance(value, str):
                raise ModelError(f"{self.family}.{name} must be a string, got {value!r}")
            value = typ(value)
            if not check(value):
                raise ModelError(f"{self.family}.{name}={value!r} out of range ({rng})")
            resolved[name] = value
        object.__setattr__(self, "hyperparameters", resolved)


class Recommender:
    """Common contract for fitted models.

    Subclasses fill ``_fit`` and ``_score_users``; models that can score from
    a bare item sequence also implement ``_score_sequence``.
    """

    family: ClassVar[str]
    iterative: ClassVar[bool] = False
    # fitted array attributes persisted in checkpoints
    state_fields: ClassVar[tuple[str, ...]] = ()

    def __init__(self, config: ModelConfig):
        if config.family != self.family:
            raise ModelError(f"config family {config.family!r} does not match {self.family!r}")
        self.config = config
        self.train: Dataset | None = None

    @property
    def hp(self) -> dict[str, Any]:
        return self.config.hyperparameters

    def fit(self, train: Dataset) -> Recommender:
        self.train = train
        self._fit(train)
        return self

    def _fit(self, train: Dataset) -> None:
        raise NotImplementedError

    @property
    def n_items(self) -> int:
        return self.train.n_items

    @property
    def seen(self) -> sp.csr_matrix:
        return self.train.interactions

    def score_users(self, users: np.ndarray) -> np.ndarray:
        """Dense ``(len(users), n_items)`` score block."""
        self._check_fitted()
        users = np.asarray(users, dtype=np.int64)
        if users.size and (users.min() < 0 or users.max() >= self.train.n_users):
            raise ModelError("user index out of range")
        return np.asarray(self._score_users(users), dtype=np.float64)

    def score_sequence(self, items: np.ndarray) -> np.ndarray:
        self._check_fitted()
        return np.asarray(self._score_sequence(np.asarray(items, dtype=np.int64)), dtype=np.float64)

    def _score_users(self, users: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _score_sequence(self, items: np.ndarray) -> np.ndarray:
        raise UnsupportedQuery(f"{self.family} cannot score an item sequence without a user profile")

    def _check_fitted(self) -> None:
        if self.train is None:
            raise ModelError(f"{self.family} model is not fitted")

    def state(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in self.state_fields}

    def restore(self, train: Dataset, arrays: dict[str, np.ndarray]) -> None:
        self.train = train
        for name in self.state_fields:
            setattr(self, name, arrays[name])
