"""Matrix factorization trained with the pairwise BPR objective."""
from __future__ import annotations

import logging
import math

import numpy as np
from numba import njit

from ..ingest import Dataset
from ..seeding import derive_seed, rng_for
from .base import ModelError, Recommender

logger = logging.getLogger(__name__)

MAX_NEGATIVE_TRIES = 100
INIT_STD = 0.01


class ModelDivergence(ModelError, FloatingPointError):
    pass


def triple_loss_and_grad(p, qi, qj, bi, bj, reg):
    """Regularized negative log-likelihood of one (u, i, j) triple and its gradient.

    loss = -ln sigmoid(x_ui - x_uj) + reg/2 * (|p|^2 + |qi|^2 + |qj|^2 + bi^2 + bj^2)
    with x_ui = <p, qi> + bi. Returns ``(loss, (dp, dqi, dqj, dbi, dbj))``.
    """
    x = float(p @ (qi - qj) + bi - bj)
    loss = math.log1p(math.exp(-x)) if x > -30 else -x
    loss += 0.5 * reg * (p @ p + qi @ qi + qj @ qj + bi * bi + bj * bj)
    g = 1.0 / (1.0 + math.exp(x))  # sigmoid(-x)
    grads = (
        -g * (qi - qj) + reg * p,
        -g * p + reg * qi,
        g * p + reg * qj,
        -g + reg * bi,
        g + reg * bj,
    )
    return loss, grads


@njit(cache=True, nogil=True)
def _bpr_epoch(indptr, indices, users, items, P, Q, b, lr, reg, seed, max_tries):
    np.random.seed(seed)
    n_items = Q.shape[0]
    n_factors = Q.shape[1]
    order = np.random.permutation(users.size)
    loss = 0.0
    skipped = 0
    for t in range(order.size):
        k = order[t]
        u = users[k]
        i = items[k]
        lo = indptr[u]
        hi = indptr[u + 1]
        j = -1
        if hi - lo < n_items:
            for _ in range(max_tries):
                c = np.random.randint(0, n_items)
                pos = np.searchsorted(indices[lo:hi], c)
                if pos < hi - lo and indices[lo + pos] == c:
                    continue
                j = c
                break
        if j < 0:
            skipped += 1
            continue
        x = b[i] - b[j]
        for f in range(n_factors):
            x += P[u, f] * (Q[i, f] - Q[j, f])
        if x > -30.0:
            loss += math.log1p(math.exp(-x))
        else:
            loss -= x
        g = 1.0 / (1.0 + math.exp(x))
        for f in range(n_factors):
            pu = P[u, f]
            qi = Q[i, f]
            qj = Q[j, f]
            P[u, f] += lr * (g * (qi - qj) - reg * pu)
            Q[i, f] += lr * (g * pu - reg * qi)
            Q[j, f] += lr * (-g * pu - reg * qj)
        b[i] += lr * (g - reg * b[i])
        b[j] += lr * (-g - reg * b[j])
    return loss, skipped


class BPRMF(Recommender):
    family = "bprmf"
    iterative = True
    state_fields = ("user_factors", "item_factors", "item_bias")

    def _fit(self, train: Dataset) -> None:
        self.start(train)
        self.run_epochs(self.hp["epochs"])

    def start(self, train: Dataset) -> BPRMF:
        """Initialize parameters without training (used for budgeted training)."""
        self.train = train
        seed = self.hp.get("seed", 0)
        rng = rng_for(seed, "bpr-init")
        k = self.hp["factors"]
        self.user_factors = rng.normal(0.0, INIT_STD, (train.n_users, k))
        self.item_factors = rng.normal(0.0, INIT_STD, (train.n_items, k))
        self.item_bias = np.zeros(train.n_items)
        self.epochs_done = 0
        self.losses: list[float] = []
        return self

    def run_epochs(self, n: int) -> None:
        X = self.train.interactions
        users = np.repeat(np.arange(X.shape[0], dtype=np.int64), np.diff(X.indptr))
        items = X.indices.astype(np.int64)
        indptr = X.indptr.astype(np.int64)
        indices = X.indices.astype(np.int64)
        seed = self.hp.get("seed", 0)
        for _ in range(n):
            epoch_seed = derive_seed(seed, "bpr-epoch", self.epochs_done) & 0xFFFFFFFF
            loss, skipped = _bpr_epoch(
                indptr, indices, users, items,
                self.user_factors, self.item_factors, self.item_bias,
                self.hp["learning_rate"], self.hp.get("regularization", 0.0),
                epoch_seed, MAX_NEGATIVE_TRIES,
            )
            self.epochs_done += 1
            if not (math.isfinite(loss) and np.isfinite(self.user_factors).all()
                    and np.isfinite(self.item_factors).all() and np.isfinite(self.item_bias).all()):
                raise ModelDivergence(
                    f"BPR diverged at epoch {self.epochs_done} (lr={self.hp['learning_rate']}, loss={loss})"
                )
            if skipped:
                logger.debug("epoch %d: skipped %d examples without a negative", self.epochs_done, skipped)
            self.losses.append(loss / max(users.size - skipped, 1))

    def _score_users(self, users):
        return self.user_factors[users] @ self.item_factors.T + self.item_bias
