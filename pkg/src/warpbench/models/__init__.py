"""Recommender families behind one fit / score / recommend contract."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..ingest import Dataset
from .base import FAMILIES, STOCHASTIC, ModelConfig, ModelError, Recommender, UnsupportedQuery
from .bpr import BPRMF, ModelDivergence
from .ease import EASE, EaseError, ease_weights
from .knn import ItemKNN, UserKNN, pairwise_similarity
from .ranking import topk
from .simple import MostPop, RandomRec

REGISTRY: dict[str, type[Recommender]] = {
    cls.family: cls for cls in (MostPop, RandomRec, ItemKNN, UserKNN, EASE, BPRMF)
}


def build_model(config: ModelConfig) -> Recommender:
    return REGISTRY[config.family](config)


def fit(train: Dataset, config: ModelConfig) -> Recommender:
    return build_model(config).fit(train)


def fit_mostpop(train: Dataset) -> MostPop:
    return fit(train, ModelConfig("mostpop"))


def fit_random(train: Dataset, seed: int) -> RandomRec:
    return fit(train, ModelConfig("random", {"seed": seed}))


def fit_itemknn(train: Dataset, neighbors: int, similarity: str = "cosine", shrinkage: float = 0.0) -> ItemKNN:
    return fit(train, ModelConfig("itemknn", {"neighbors": neighbors, "similarity": similarity, "shrinkage": shrinkage}))


def fit_userknn(train: Dataset, neighbors: int, similarity: str = "cosine", shrinkage: float = 0.0) -> UserKNN:
    return fit(train, ModelConfig("userknn", {"neighbors": neighbors, "similarity": similarity, "shrinkage": shrinkage}))


def fit_ease(train: Dataset, l2: float, dense_cap: int = 30_000) -> EASE:
    return fit(train, ModelConfig("ease", {"l2": l2, "dense_cap": dense_cap}))


def fit_bprmf(train: Dataset, **hyperparameters) -> BPRMF:
    return fit(train, ModelConfig("bprmf", hyperparameters))


@dataclass(frozen=True)
class RecommendationList:
    """Ranked lists for a batch of users.

    ``items`` / ``scores`` are ``(n_users, k)`` arrays padded with ``-1`` /
    ``-inf`` when fewer than ``k`` items were eligible.
    """

    users: np.ndarray
    items: np.ndarray
    scores: np.ndarray
    k: int
    filter_seen: bool

    def __len__(self) -> int:
        return self.users.size

    @property
    def lengths(self) -> np.ndarray:
        return (self.items >= 0).sum(axis=1)

    @property
    def empty_users(self) -> np.ndarray:
        return self.users[self.lengths == 0]

    def for_user(self, row: int) -> list[tuple[int, float]]:
        n = int(self.lengths[row])
        return list(zip(self.items[row, :n].tolist(), self.scores[row, :n].tolist()))


def recommend(
    model: Recommender, users: Sequence[int] | np.ndarray, k: int, filter_seen: bool = True, batch: int = 1024
) -> RecommendationList:
    """Exact top-``k`` per user; seen items are masked before selection."""
    if k < 1:
        raise ModelError("k must be >= 1")
    users = np.asarray(users, dtype=np.int64)
    width = min(k, model.n_items)
    items = np.full((users.size, width), -1, dtype=np.int64)
    scores = np.full((users.size, width), -np.inf)
    seen = model.seen
    for start in range(0, users.size, batch):
        chunk = users[start:start + batch]
        block = model.score_users(chunk)
        if filter_seen:
            sub = seen[chunk]
            rows = np.repeat(np.arange(chunk.size), np.diff(sub.indptr))
            block[rows, sub.indices] = -np.inf
        it, sc = topk(block, width)
        items[start:start + chunk.size] = it
        scores[start:start + chunk.size] = sc
    return RecommendationList(users, items, scores, k, filter_seen)


@dataclass(frozen=True)
class SequenceRecommendation:
    items: list[int]
    scores: list[float]
    unknown: list[str]


def recommend_from_items(model: Recommender, item_sequence: Sequence[str], k: int) -> SequenceRecommendation:
    """Rank items for an anonymous profile given as raw item ids.

    Unknown ids are reported back, not fatal; the input items never appear in
    the output.
    """
    if k < 1:
        raise ModelError("k must be >= 1")
    item_map = model.train.item_map
    known = [item_map.index(s) for s in item_sequence if s in item_map]
    unknown = [s for s in item_sequence if s not in item_map]
    if not known:
        raise ModelError("none of the input item ids are known to the model")
    seq = np.unique(np.asarray(known, dtype=np.int64))
    scores = model.score_sequence(seq)
    scores[seq] = -np.inf
    it, sc = topk(scores[None, :], k)
    ok = it[0] >= 0
    return SequenceRecommendation(it[0][ok].tolist(), sc[0][ok].tolist(), unknown)


from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint  # noqa: E402

__all__ = [
    "BPRMF", "EASE", "FAMILIES", "STOCHASTIC", "CheckpointError", "EaseError", "ItemKNN", "ModelConfig", "ModelDivergence",
    "ModelError", "MostPop", "REGISTRY", "RandomRec", "RecommendationList", "Recommender", "SequenceRecommendation",
    "UnsupportedQuery", "UserKNN", "build_model", "ease_weights", "fit", "fit_bprmf", "fit_ease", "fit_itemknn",
    "fit_mostpop", "fit_random", "fit_userknn", "load_checkpoint", "pairwise_similarity", "recommend",
    "recommend_from_items", "save_checkpoint", "topk",
]
