"""Unpersonalized baselines."""
from __future__ import annotations

import numpy as np

from ..ingest import Dataset
from ..seeding import rng_for
from .base import Recommender


class MostPop(Recommender):
    family = "mostpop"
    state_fields = ("popularity",)

    def _fit(self, train: Dataset) -> None:
        self.popularity = train.item_degrees().astype(np.float64)

    def _score_users(self, users):
        return np.broadcast_to(self.popularity, (users.size, self.n_items)).copy()

    def _score_sequence(self, items):
        return self.popularity.copy()


class RandomRec(Recommender):
    """Uniform random scores; each user's stream comes from its own derived seed."""

    family = "random"
    state_fields = ()

    def _fit(self, train: Dataset) -> None:
        pass

    def _score_users(self, users):
        seed = self.hp.get("seed", 0)
        out = np.empty((users.size, self.n_items))
        for row, u in enumerate(users.tolist()):
            out[row] = rng_for(seed, "random-scores", u).random(self.n_items)
        return out
