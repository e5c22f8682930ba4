"""Filtering and train/validation/test splitting."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Literal

import numpy as np

from .ingest import Dataset
from .seeding import derive_seed, rng_for

logger = logging.getLogger(__name__)


class PrepError(ValueError):
    pass


# ---------------------------------------------------------------- filters


@dataclass(frozen=True)
class FilterSpec:
    """One filtering step.

    kind ``rating`` keeps interactions with rating >= a threshold: the global
    ``threshold`` (mode ``global``) or the user's / item's own mean rating
    (modes ``user-mean`` / ``item-mean``). ``k-core`` peels to the k-core.
    ``cold`` drops users with fewer than ``min_user`` and items with fewer
    than ``min_item`` interactions in a single pass.
    """

    kind: Literal["rating", "k-core", "cold"]
    mode: Literal["global", "user-mean", "item-mean"] = "global"
    threshold: float = 0.0
    k: int = 1
    min_user: int = 0
    min_item: int = 0

    def __post_init__(self):
        if self.kind not in ("rating", "k-core", "cold"):
            raise PrepError(f"unknown filter kind {self.kind!r}")
        if self.mode not in ("global", "user-mean", "item-mean"):
            raise PrepError(f"unknown rating-threshold mode {self.mode!r}")
        if not np.isfinite(self.threshold):
            raise PrepError("threshold must be finite")
        if self.k < 1:
            raise PrepError("k-core requires k >= 1")
        if self.min_user < 0 or self.min_item < 0:
            raise PrepError("cold-filter minimum counts must be >= 0")


def filter_by_rating(d: Dataset, spec: FilterSpec) -> Dataset:
    rows, cols, vals = d.coo()
    if spec.mode == "global":
        keep = vals >= spec.threshold
    else:
        idx, n = (rows, d.n_users) if spec.mode == "user-mean" else (cols, d.n_items)
        sums = np.bincount(idx, weights=vals, minlength=n)
        counts = np.bincount(idx, minlength=n)
        means = sums / np.maximum(counts, 1)
        keep = vals >= means[idx]
    return d.select(keep)


def k_core(d: Dataset, k: int) -> Dataset:
    """Largest sub-dataset where every remaining user and item has >= k interactions."""
    if k < 1:
        raise PrepError("k must be >= 1")
    rows, cols, _ = d.coo()
    alive = np.ones(rows.size, dtype=bool)
    while True:
        udeg = np.bincount(rows[alive], minlength=d.n_users)
        ideg = np.bincount(cols[alive], minlength=d.n_items)
        drop = alive & ((udeg[rows] < k) | (ideg[cols] < k))
        if not drop.any():
            break
        alive &= ~drop
    return d.select(alive)


def cold_filter(d: Dataset, min_user: int = 0, min_item: int = 0) -> Dataset:
    if min_user < 0 or min_item < 0:
        raise PrepError("minimum counts must be >= 0")
    rows, cols, _ = d.coo()
    udeg, ideg = d.user_degrees(), d.item_degrees()
    return d.select((udeg[rows] >= min_user) & (ideg[cols] >= min_item))


def apply_filter(d: Dataset, spec: FilterSpec) -> Dataset:
    if spec.kind == "rating":
        return filter_by_rating(d, spec)
    if spec.kind == "k-core":
        return k_core(d, spec.k)
    return cold_filter(d, spec.min_user, spec.min_item)


# ---------------------------------------------------------------- splits


@dataclass(frozen=True)
class SplitSpec:
    strategy: Literal["holdout", "leave-k-out", "fixed-timestamp", "k-fold"]
    mode: Literal["random", "temporal"] = "random"
    ratio: tuple[float, ...] = (0.9, 0.1)
    k: int = 1
    validation: bool = False
    timestamp: int | None = None
    folds: int = 5
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "ratio", tuple(float(x) for x in self.ratio))
        if self.strategy not in ("holdout", "leave-k-out", "fixed-timestamp", "k-fold"):
            raise PrepError(f"unknown split strategy {self.strategy!r}")
        if self.mode not in ("random", "temporal"):
            raise PrepError(f"unknown split mode {self.mode!r}")
        if self.strategy == "holdout":
            if len(self.ratio) not in (2, 3):
                raise PrepError("holdout ratio must be (train, test) or (train, validation, test)")
            if any(not 0.0 < r < 1.0 for r in self.ratio) or abs(sum(self.ratio) - 1.0) > 1e-9:
                raise PrepError("holdout ratios must lie in (0, 1) and sum to 1")
        if self.strategy == "leave-k-out" and self.k < 1:
            raise PrepError("leave-k-out requires k >= 1")
        if self.strategy == "fixed-timestamp" and self.timestamp is None:
            raise PrepError("fixed-timestamp split requires a timestamp")
        if self.strategy == "k-fold" and self.folds < 2:
            raise PrepError("k-fold requires folds >= 2")

    @property
    def has_validation(self) -> bool:
        return (self.strategy == "holdout" and len(self.ratio) == 3) or (
            self.strategy == "leave-k-out" and self.validation
        )

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class SplitOutput:
    train: Dataset
    test: Dataset
    spec: SplitSpec
    validation: Dataset | None = None
    folds: list[tuple[Dataset, Dataset]] | None = None
    unsplittable_users: int = 0

    def provenance(self) -> dict:
        out = {"spec": self.spec.as_dict(), "seed": self.spec.seed, "unsplittable_users": self.unsplittable_users}
        out["sizes"] = {"train": self.train.nnz, "test": self.test.nnz}
        if self.validation is not None:
            out["sizes"]["validation"] = self.validation.nnz
        if self.folds is not None:
            out["sizes"]["folds"] = [(tr.nnz, te.nnz) for tr, te in self.folds]
        return out

    @property
    def fit_data(self) -> Dataset:
        """Training data for the final model: train plus validation when present."""
        return self.train if self.validation is None else self.train.union(self.validation)


def _require_ts(d: Dataset, what: str) -> None:
    if not d.has_timestamps:
        raise PrepError(f"{what} requires timestamps")


def _per_user_test_mask(d: Dataset, n_test_for, mode: str, seed: int, label: str) -> tuple[np.ndarray, int]:
    """Mark, per user, the stored interactions that go to the test side.

    ``n_test_for(n)`` gives the number of test interactions for a user with
    ``n`` interactions; users where that leaves either side empty stay wholly
    in train.
    """
    indptr = d.interactions.indptr
    cols = d.interactions.indices
    mask = np.zeros(d.nnz, dtype=bool)
    skipped = 0
    for u in range(d.n_users):
        lo, hi = indptr[u], indptr[u + 1]
        n = hi - lo
        if n == 0:
            continue
        n_test = n_test_for(n)
        if n_test < 1 or n_test >= n:
            skipped += 1
            continue
        if mode == "temporal":
            # latest interactions last; ties by item index
            order = np.lexsort((cols[lo:hi], d.timestamps[lo:hi]))
        else:
            order = rng_for(seed, label, u).permutation(n)
        mask[lo + order[n - n_test:]] = True
    return mask, skipped


def _holdout_count(frac: float):
    return lambda n: int(np.floor(n * frac + 0.5))


def split_holdout(d: Dataset, spec: SplitSpec) -> SplitOutput:
    if spec.mode == "temporal":
        _require_ts(d, "temporal holdout")
    test_frac = spec.ratio[-1]
    mask, skipped = _per_user_test_mask(d, _holdout_count(test_frac), spec.mode, spec.seed, "split")
    train, test = d.select(~mask), d.select(mask)
    validation = None
    if len(spec.ratio) == 3:
        val_frac = spec.ratio[1] / (spec.ratio[0] + spec.ratio[1])
        vmask, _ = _per_user_test_mask(train, _holdout_count(val_frac), spec.mode, spec.seed, "split-validation")
        train, validation = train.select(~vmask), train.select(vmask)
    if skipped:
        logger.info("holdout: %d users too small to split kept in train", skipped)
    return SplitOutput(train, test, spec, validation=validation, unsplittable_users=skipped)


def split_leave_k_out(d: Dataset, spec: SplitSpec) -> SplitOutput:
    if spec.mode == "temporal":
        _require_ts(d, "temporal leave-k-out")
    k = spec.k
    mask, skipped = _per_user_test_mask(d, lambda n: k, spec.mode, spec.seed, "split")
    train, test = d.select(~mask), d.select(mask)
    validation = None
    if spec.validation:
        vmask, _ = _per_user_test_mask(train, lambda n: k, spec.mode, spec.seed, "split-validation")
        train, validation = train.select(~vmask), train.select(vmask)
    if skipped:
        logger.info("leave-%d-out: %d users with <= %d interactions kept in train", k, skipped, k)
    return SplitOutput(train, test, spec, validation=validation, unsplittable_users=skipped)


def split_fixed_timestamp(d: Dataset, spec: SplitSpec) -> SplitOutput:
    _require_ts(d, "fixed-timestamp split")
    mask = d.timestamps >= spec.timestamp
    return SplitOutput(d.select(~mask), d.select(mask), spec)


def split_kfold(d: Dataset, spec: SplitSpec) -> SplitOutput:
    if d.nnz < spec.folds:
        raise PrepError(f"{d.nnz} interactions cannot fill {spec.folds} folds")
    perm = np.random.default_rng(derive_seed(spec.seed, "kfold", 0)).permutation(d.nnz)
    folds = []
    for group in np.array_split(perm, spec.folds):
        mask = np.zeros(d.nnz, dtype=bool)
        mask[group] = True
        folds.append((d.select(~mask), d.select(mask)))
    return SplitOutput(folds[0][0], folds[0][1], spec, folds=folds)


def split(d: Dataset, spec: SplitSpec) -> SplitOutput:
    return {
        "holdout": split_holdout,
        "leave-k-out": split_leave_k_out,
        "fixed-timestamp": split_fixed_timestamp,
        "k-fold": split_kfold,
    }[spec.strategy](d, spec)
