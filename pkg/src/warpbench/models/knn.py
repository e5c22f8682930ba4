"""Neighbourhood models (item-based and user-based)."""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from ..ingest import Dataset
from .base import Recommender
from .ranking import topk


def pairwise_similarity(
    X: sp.csr_matrix, measure: str = "cosine", shrinkage: float = 0.0, cols: np.ndarray | None = None
) -> np.ndarray:
    """Similarity between all columns of ``X`` and the columns listed in ``cols``.

    cosine: <x_i, x_j> / (|x_i| |x_j| + shrinkage) over the stored values;
    jaccard: |U_i & U_j| / (|U_i | U_j| + shrinkage) over the support sets.
    Returns a dense ``(n_cols, len(cols))`` block; 0/0 is taken as 0.
    """
    X = sp.csc_matrix(X, dtype=np.float64)
    if cols is None:
        cols = np.arange(X.shape[1])
    if measure == "jaccard":
        X = X.copy()
        X.data = np.ones_like(X.data)
    elif measure != "cosine":
        raise ValueError(f"unknown similarity {measure!r}")
    Xc = X[:, cols]
    inter = (X.T @ Xc).toarray()
    if measure == "cosine":
        norms = np.sqrt(np.asarray(X.multiply(X).sum(axis=0)).ravel())
        denom = np.outer(norms, norms[cols]) + shrinkage
    else:
        deg = np.asarray(X.sum(axis=0)).ravel()
        denom = deg[:, None] + deg[cols][None, :] - inter + shrinkage
    with np.errstate(invalid="ignore", divide="ignore"):
        sim = np.where(denom > 0, inter / np.where(denom > 0, denom, 1.0), 0.0)
    return sim


def neighbour_lists(X: sp.csr_matrix, n_neighbors: int, measure: str, shrinkage: float, block: int = 1024) -> sp.csr_matrix:
    """Pruned similarity graph over the columns of ``X``.

    Row ``i`` holds the ``n_neighbors`` most similar other columns with positive
    similarity, in descending order (ties by index).
    """
    n = X.shape[1]
    indptr = [0]
    indices: list[np.ndarray] = []
    data: list[np.ndarray] = []
    for start in range(0, n, block):
        cols = np.arange(start, min(start + block, n))
        sim = pairwise_similarity(X, measure, shrinkage, cols).T  # rows = cols
        sim[np.arange(cols.size), cols] = -np.inf
        sim[sim <= 0] = -np.inf
        nbr, val = topk(sim, n_neighbors)
        for r in range(cols.size):
            ok = nbr[r] >= 0
            indices.append(nbr[r][ok])
            data.append(val[r][ok])
            indptr.append(indptr[-1] + int(ok.sum()))
    W = sp.csr_matrix(
        (np.concatenate(data) if data else np.empty(0), np.concatenate(indices) if indices else np.empty(0, np.int64), np.array(indptr)),
        shape=(n, n),
    )
    return W


class _KNN(Recommender):
    state_fields = ("sim_indptr", "sim_indices", "sim_data")

    def _build(self, X: sp.csr_matrix) -> None:
        W = neighbour_lists(X, self.hp["neighbors"], self.hp["similarity"], self.hp["shrinkage"])
        self.sim_indptr, self.sim_indices, self.sim_data = W.indptr, W.indices, W.data

    @property
    def similarity(self) -> sp.csr_matrix:
        n = self.sim_indptr.size - 1
        return sp.csr_matrix((self.sim_data, self.sim_indices, self.sim_indptr), shape=(n, n))

    def neighbours(self, idx: int) -> list[tuple[int, float]]:
        lo, hi = self.sim_indptr[idx], self.sim_indptr[idx + 1]
        return list(zip(self.sim_indices[lo:hi].tolist(), self.sim_data[lo:hi].tolist()))


class ItemKNN(_KNN):
    """score(u, i) = sum over j in profile(u) of sim(i, j) * rating(u, j), j among i's neighbours."""

    family = "itemknn"

    def _fit(self, train: Dataset) -> None:
        self._build(train.interactions)

    def _score_users(self, users):
        return (self.seen[users] @ self.similarity.T).toarray()

    def _score_sequence(self, items):
        W = self.similarity.tocsc()
        return np.asarray(W[:, items].sum(axis=1)).ravel()


class UserKNN(_KNN):
    """score(u, i) = sum over v in neighbours(u) of sim(u, v) * rating(v, i)."""

    family = "userknn"

    def _fit(self, train: Dataset) -> None:
        self._build(train.interactions.T.tocsr())

    def _score_users(self, users):
        return (self.similarity[users] @ self.seen).toarray()
