"""Closed-form item-item autoencoder with a zero-diagonal constraint."""
from __future__ import annotations

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from ..ingest import Dataset
from .base import ModelError, Recommender


class EaseError(ModelError):
    pass


def ease_weights(X: sp.spmatrix | np.ndarray, l2: float) -> np.ndarray:
    """Solve for the item-item weight matrix.

    G = X'X + l2*I is inverted through its Cholesky factor; then
    B = I - P diag(1/diag(P)) with the diagonal set to exactly zero.
    """
    if l2 <= 0:
        raise EaseError("l2 must be > 0")
    if sp.issparse(X):
        G = (X.T @ X).toarray()
    else:
        X = np.asarray(X, dtype=np.float64)
        G = X.T @ X
    G = np.asarray(G, dtype=np.float64)
    if not np.isfinite(G).all():
        raise EaseError("non-finite values in the gram matrix")
    G[np.diag_indices_from(G)] += l2

    c, info = scipy.linalg.lapack.dpotrf(G, lower=False, clean=True, overwrite_a=True)
    if info != 0:
        raise EaseError(f"Cholesky factorization failed (info={info})")
    P, info = scipy.linalg.lapack.dpotri(c, lower=False, overwrite_c=True)
    if info != 0:
        raise EaseError(f"inverse from Cholesky factor failed (info={info})")
    # dpotri fills the upper triangle only
    P = np.triu(P) + np.triu(P, 1).T

    B = P / (-np.diag(P))[None, :]
    B[np.diag_indices_from(B)] = 0.0
    return B


class EASE(Recommender):
    family = "ease"
    state_fields = ("B",)

    def _fit(self, train: Dataset) -> None:
        cap = self.hp["dense_cap"]
        if train.n_items > cap:
            raise EaseError(f"{train.n_items} items exceed the dense cap of {cap}")
        self.B = ease_weights(train.interactions, self.hp["l2"])

    def _score_users(self, users):
        return np.asarray(self.seen[users] @ self.B)

    def _score_sequence(self, items):
        return self.B[items].sum(axis=0)
