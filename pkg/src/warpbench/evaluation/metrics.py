"""Top-K accuracy metrics and catalogue exposure metrics."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from ..ingest import Dataset
from ..models import RecommendationList

ACCURACY_METRICS = ("precision", "recall", "f1", "hitrate", "mrr", "map", "ndcg")
EXPOSURE_METRICS = ("item_coverage", "user_coverage", "gini", "entropy", "epc", "arp", "aplt")
ALL_METRICS = ACCURACY_METRICS + EXPOSURE_METRICS


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class RelevanceJudgments:
    """Relevant test items per user (internal indices), keyed by user."""

    relevant: dict[int, np.ndarray]

    @classmethod
    def from_dataset(cls, test: Dataset, threshold: float | None = None) -> RelevanceJudgments:
        X = test.interactions
        out = {}
        for u in range(X.shape[0]):
            lo, hi = X.indptr[u], X.indptr[u + 1]
            cols, vals = X.indices[lo:hi], X.data[lo:hi]
            if threshold is not None:
                cols = cols[vals >= threshold]
            if cols.size:
                out[u] = np.asarray(cols, dtype=np.int64)
        return cls(out)

    @property
    def users(self) -> np.ndarray:
        return np.array(sorted(self.relevant), dtype=np.int64)


@dataclass
class MetricValue:
    name: str
    k: int | None
    aggregate: float
    per_user: np.ndarray | None = None

    @property
    def key(self) -> str:
        return self.name if self.k is None else f"{self.name}@{self.k}"


@dataclass
class MetricReport:
    users: np.ndarray
    values: dict[str, MetricValue] = field(default_factory=dict)
    skipped_users: int = 0

    def __getitem__(self, key: str) -> float:
        return self.values[key].aggregate

    def per_user(self, key: str) -> np.ndarray:
        v = self.values[key].per_user
        if v is None:
            raise KeyError(f"{key} has no per-user vector")
        return v

    def add(self, value: MetricValue) -> None:
        self.values[value.key] = value

    def as_dict(self) -> dict[str, float]:
        return {k: v.aggregate for k, v in self.values.items()}


def _hits(recs: RecommendationList, judg: RelevanceJudgments, k: int, rows: np.ndarray) -> np.ndarray:
    """Binary relevance matrix ``(len(rows), k)`` of the top-k lists."""
    out = np.zeros((rows.size, k), dtype=bool)
    for r, row in enumerate(rows.tolist()):
        rel = judg.relevant[int(recs.users[row])]
        top = recs.items[row, :k]
        out[r, : top.size] = np.isin(top, rel) & (top >= 0)
    return out


def compute_accuracy(
    recs: RecommendationList,
    judg: RelevanceJudgments,
    ks: Iterable[int],
    metrics: Sequence[str] = ACCURACY_METRICS,
) -> MetricReport:
    """Per-user accuracy metrics over users that have at least one relevant item.

    Users without relevant items are excluded from the means and counted in
    ``skipped_users``.
    """
    ks = list(ks)
    if not ks or min(ks) < 1:
        raise MetricError("cutoffs must be >= 1")
    unknown = set(metrics) - set(ACCURACY_METRICS)
    if unknown:
        raise MetricError(f"unknown accuracy metrics {sorted(unknown)}")
    if max(ks) > recs.k:
        raise MetricError(f"cutoff {max(ks)} exceeds the list length {recs.k}")
    rows = np.array([r for r, u in enumerate(recs.users.tolist()) if u in judg.relevant], dtype=np.int64)
    if rows.size == 0:
        raise MetricError("no evaluated users with relevant items")
    users = recs.users[rows]
    n_rel = np.array([judg.relevant[int(u)].size for u in users], dtype=np.float64)
    report = MetricReport(users, skipped_users=len(recs) - rows.size)

    kmax = max(ks)
    hits_all = _hits(recs, judg, min(kmax, recs.items.shape[1]), rows)
    for k in ks:
        hits = np.zeros((rows.size, k), dtype=bool)
        w = min(k, hits_all.shape[1])
        hits[:, :w] = hits_all[:, :w]
        ranks = np.arange(1, k + 1, dtype=np.float64)
        n_hit = hits.sum(axis=1).astype(np.float64)
        vals: dict[str, np.ndarray] = {}
        vals["precision"] = n_hit / k
        vals["recall"] = n_hit / n_rel
        with np.errstate(invalid="ignore", divide="ignore"):
            f1 = 2 * vals["precision"] * vals["recall"] / (vals["precision"] + vals["recall"])
        vals["f1"] = np.nan_to_num(f1)
        vals["hitrate"] = (n_hit > 0).astype(np.float64)
        first = np.where(hits.any(axis=1), hits.argmax(axis=1) + 1, 0)
        vals["mrr"] = np.where(first > 0, 1.0 / np.maximum(first, 1), 0.0)
        prec_at = np.cumsum(hits, axis=1) / ranks
        vals["map"] = (prec_at * hits).sum(axis=1) / np.minimum(k, n_rel)
        disc = 1.0 / np.log2(ranks + 1.0)
        dcg = (hits * disc).sum(axis=1)
        cdisc = np.concatenate([[0.0], np.cumsum(disc)])
        idcg = cdisc[np.minimum(k, n_rel).astype(np.int64)]
        vals["ndcg"] = dcg / idcg
        for name in metrics:
            v = vals[name]
            report.add(MetricValue(name, k, float(v.mean()), v))
    return report


def long_tail_mask(popularity: np.ndarray, head_share: float = 0.8) -> np.ndarray:
    """True for items outside the short head.

    The short head is the smallest prefix of items sorted by descending
    popularity (ties by index) whose interactions reach ``head_share`` of the
    total.
    """
    n = popularity.size
    order = np.lexsort((np.arange(n), -popularity))
    total = popularity.sum()
    tail = np.ones(n, dtype=bool)
    if total <= 0:
        return tail
    cum = np.cumsum(popularity[order])
    n_head = int(np.searchsorted(cum, head_share * total - 1e-12 * total) + 1)
    tail[order[:n_head]] = False
    return tail


def gini(counts: np.ndarray) -> float:
    c = np.sort(np.asarray(counts, dtype=np.float64))
    n = c.size
    total = c.sum()
    if n == 0 or total == 0:
        return 0.0
    i = np.arange(1, n + 1)
    return float(((2 * i - n - 1) * c).sum() / (n * total))


def shannon_entropy(counts: np.ndarray) -> float:
    c = np.asarray(counts, dtype=np.float64)
    p = c[c > 0] / c.sum()
    return float(-(p * np.log2(p)).sum())


def compute_exposure(
    recs: RecommendationList, train: Dataset, k: int | None = None, head_share: float = 0.8
) -> MetricReport:
    """Catalogue-level exposure, novelty and popularity-bias metrics.

    Every slot of every list counts once; ``k`` truncates the lists first.
    """
    items = recs.items if k is None else recs.items[:, :k]
    flat = items[items >= 0]
    if flat.size == 0:
        raise MetricError("empty recommendation set")
    n_items = train.n_items
    counts = np.bincount(flat, minlength=n_items)
    # one interaction per (user, item), so degree == number of users
    pop = train.item_degrees().astype(np.float64)
    max_users = pop.max() if pop.max() > 0 else 1.0
    tail = long_tail_mask(pop, head_share)

    report = MetricReport(recs.users)
    kk = recs.k if k is None else k
    vals = {
        "item_coverage": np.count_nonzero(counts) / n_items,
        "user_coverage": float((((items >= 0).sum(axis=1)) > 0).mean()),
        "gini": gini(counts),
        "entropy": shannon_entropy(counts),
        "epc": float((1.0 - pop[flat] / max_users).mean()),
        "arp": float(pop[flat].mean()),
        "aplt": float(tail[flat].mean()),
    }
    for name, v in vals.items():
        report.add(MetricValue(name, kk, float(v)))
    return report


def evaluate(
    recs: RecommendationList,
    judg: RelevanceJudgments,
    train: Dataset,
    ks: Iterable[int],
    metrics: Sequence[str] = ALL_METRICS,
) -> MetricReport:
    ks = list(ks)
    acc = [m for m in metrics if m in ACCURACY_METRICS]
    exp = [m for m in metrics if m in EXPOSURE_METRICS]
    unknown = set(metrics) - set(ALL_METRICS)
    if unknown:
        raise MetricError(f"unknown metrics {sorted(unknown)}")
    report = compute_accuracy(recs, judg, ks, acc) if acc else MetricReport(recs.users)
    for k in ks:
        if exp:
            ex = compute_exposure(recs, train, k)
            for name in exp:
                report.add(ex.values[f"{name}@{k}"])
    return report
