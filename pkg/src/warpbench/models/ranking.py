"""Exact top-K selection with the engine-wide tie rule."""
from __future__ import annotations

import numpy as np


def topk(scores: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise top-``k`` of a dense score matrix.

    Items are ordered by descending score, ties by ascending column index.
    Entries scored ``-inf`` or NaN are ineligible. Returns ``(items, values)``
    of shape ``(m, min(k, n))``, padded with ``-1`` / ``-inf`` where a row has
    fewer eligible entries.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    scores = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    m, n = scores.shape
    k = min(k, n)
    if m == 0 or n == 0:
        return np.empty((m, k), dtype=np.int64), np.empty((m, k))
    neg = np.where(np.isnan(scores), np.inf, -scores)
    part = np.argpartition(neg, k - 1, axis=1)[:, :k]
    kth = np.take_along_axis(neg, part, axis=1).max(axis=1)
    # argpartition picks arbitrary members of a tie group straddling the cut
    straddle = np.nonzero((neg <= kth[:, None]).sum(axis=1) > k)[0]
    for r in straddle:
        cand = np.nonzero(neg[r] <= kth[r])[0]
        part[r] = cand[np.lexsort((cand, neg[r, cand]))[:k]]
    vals = np.take_along_axis(neg, part, axis=1)
    order = np.lexsort((part, vals), axis=1)
    items = np.take_along_axis(part, order, axis=1).astype(np.int64)
    vals = -np.take_along_axis(vals, order, axis=1)
    dead = ~np.isfinite(vals) & (vals < 0)
    items[dead] = -1
    vals[dead] = -np.inf
    return items, vals
