"""Paired / independent significance tests and multiple-comparison corrections."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

WILCOXON_EXACT_MAX_N = 25
MANN_WHITNEY_EXACT_MAX_N = 20


class SignificanceError(ValueError):
    pass


@dataclass
class TestResult:
    __test__ = False  # not a pytest class

    test: str
    statistic: float
    p_value: float
    n: int
    method: str
    degenerate: bool = False
    df: int | None = None
    adjusted: dict[str, float] = field(default_factory=dict)

    def as_dict(self) -> dict:
        out = {
            "test": self.test,
            "statistic": self.statistic,
            "p_value": self.p_value,
            "n": self.n,
            "method": self.method,
            "degenerate": self.degenerate,
            "adjusted": dict(self.adjusted),
        }
        if self.df is not None:
            out["df"] = self.df
        return out


def _paired(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise SignificanceError("paired tests need two aligned 1-d vectors")
    return a - b


def paired_t_test(a, b) -> TestResult:
    """Two-sided paired Student t-test.

    Zero-variance differences are degenerate: p = 1 when the mean difference
    is 0, p = 0 otherwise.
    """
    d = _paired(a, b)
    n = d.size
    if n < 2:
        raise SignificanceError("t-test needs n >= 2")
    mean = d.mean()
    sd = d.std(ddof=1)
    if sd == 0:
        t = 0.0 if mean == 0 else math.copysign(math.inf, mean)
        return TestResult("t-test", t, 1.0 if mean == 0 else 0.0, n, "exact", degenerate=True, df=n - 1)
    t = mean / (sd / math.sqrt(n))
    p = float(min(1.0, 2.0 * stats.t.sf(abs(t), n - 1)))
    return TestResult("t-test", float(t), p, n, "exact", df=n - 1)


def _sum_distribution(weights: np.ndarray, subset_size: int | None = None) -> np.ndarray:
    """Counts of every attainable sum of a subset of integer ``weights``.

    Without ``subset_size`` all 2^n subsets are counted; otherwise only the
    subsets of that size (returned as the row for that size).
    """
    total = int(weights.sum())
    if subset_size is None:
        dist = np.zeros(total + 1, dtype=np.float64)
        dist[0] = 1.0
        for w in weights.tolist():
            dist[w:] = dist[w:] + dist[: total + 1 - w].copy()
        return dist
    dist = np.zeros((subset_size + 1, total + 1), dtype=np.float64)
    dist[0, 0] = 1.0
    for w in weights.tolist():
        dist[1:, w:] = dist[1:, w:] + dist[:-1, : total + 1 - w].copy()
    return dist[subset_size]


def _two_sided_exact(dist: np.ndarray, observed: int) -> float:
    prob = dist / dist.sum()
    lower = prob[: observed + 1].sum()
    upper = prob[observed:].sum()
    return float(min(1.0, 2.0 * min(lower, upper)))


def _tie_term(ranked_values: np.ndarray) -> float:
    _, counts = np.unique(ranked_values, return_counts=True)
    return float((counts.astype(np.float64) ** 3 - counts).sum())


def wilcoxon_signed_rank(a, b, method: str = "auto") -> TestResult:
    """Two-sided Wilcoxon signed-rank test, statistic min(W+, W-).

    Zero differences are dropped and tied |d| get average ranks. The exact null
    distribution (all 2^n sign flips, counted by dynamic programming over the
    doubled ranks) is used for n <= 25, the tie-corrected normal approximation
    with continuity correction above.
    """
    d = _paired(a, b)
    d = d[d != 0]
    n = d.size
    if n == 0:
        return TestResult("wilcoxon", 0.0, 1.0, 0, "exact", degenerate=True)
    ranks = stats.rankdata(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    if method == "auto":
        method = "exact" if n <= WILCOXON_EXACT_MAX_N else "normal-approximation"
    if method == "exact":
        doubled = np.rint(2 * ranks).astype(np.int64)
        p = _two_sided_exact(_sum_distribution(doubled), int(round(2 * w_plus)))
    else:
        mu = n * (n + 1) / 4.0
        var = n * (n + 1) * (2 * n + 1) / 24.0 - _tie_term(np.abs(d)) / 48.0
        z = max(abs(w_plus - mu) - 0.5, 0.0) / math.sqrt(var) if var > 0 else 0.0
        p = float(min(1.0, 2.0 * stats.norm.sf(z)))
    return TestResult("wilcoxon", min(w_plus, w_minus), p, n, method)


def mann_whitney_u(a, b, method: str = "auto") -> TestResult:
    """Two-sided Mann-Whitney U test; the statistic is U for the first group.

    Exact null distribution (every assignment of the pooled, tie-averaged
    ranks to the first group) when n_a + n_b <= 20, tie-corrected normal
    approximation with continuity correction above.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise SignificanceError("Mann-Whitney needs two non-empty groups")
    na, nb = a.size, b.size
    n = na + nb
    pooled = np.concatenate([a, b])
    ranks = stats.rankdata(pooled)
    u = float(ranks[:na].sum() - na * (na + 1) / 2.0)
    if method == "auto":
        method = "exact" if n <= MANN_WHITNEY_EXACT_MAX_N else "normal-approximation"
    if method == "exact":
        doubled = np.rint(2 * ranks).astype(np.int64)
        dist = _sum_distribution(doubled, na)
        p = _two_sided_exact(dist, int(round(2 * ranks[:na].sum())))
    else:
        mu = na * nb / 2.0
        var = na * nb / 12.0 * ((n + 1) - _tie_term(pooled) / (n * (n - 1)))
        z = max(abs(u - mu) - 0.5, 0.0) / math.sqrt(var) if var > 0 else 0.0
        p = float(min(1.0, 2.0 * stats.norm.sf(z)))
    degenerate = bool(np.all(pooled == pooled[0]))
    return TestResult("mann-whitney", u, p, n, method, degenerate=degenerate)


def adjust_bonferroni(p: Sequence[float]) -> list[float]:
    m = len(p)
    return [min(1.0, m * float(x)) for x in p]


def adjust_bh(p: Sequence[float]) -> list[float]:
    """Benjamini-Hochberg step-up adjusted p-values, in input order."""
    pv = np.asarray(p, dtype=np.float64)
    m = pv.size
    if m == 0:
        return []
    order = np.argsort(pv, kind="stable")
    scaled = np.minimum(1.0, m * pv[order] / np.arange(1, m + 1))
    adj = np.minimum.accumulate(scaled[::-1])[::-1]
    out = np.empty(m)
    out[order] = adj
    return out.tolist()


TESTS = {
    "t-test": paired_t_test,
    "wilcoxon": wilcoxon_signed_rank,
    "mann-whitney": mann_whitney_u,
}
CORRECTIONS = {
    "bonferroni": adjust_bonferroni,
    "bh": adjust_bh,
}


@dataclass
class Comparison:
    metric: str
    model_a: str
    model_b: str
    result: TestResult

    def as_dict(self) -> dict:
        return {"metric": self.metric, "model_a": self.model_a, "model_b": self.model_b, **self.result.as_dict()}


def compare_models(
    per_user: dict[str, dict[str, np.ndarray]],
    tests: Sequence[str] = ("t-test", "wilcoxon"),
    corrections: Sequence[str] = ("bonferroni", "bh"),
) -> list[Comparison]:
    """Pairwise tests between models on every metric.

    ``per_user`` maps model -> metric key -> per-user vector (aligned users).
    Corrections are applied per test over the family of all (pair, metric)
    comparisons.
    """
    unknown = set(tests) - set(TESTS) | set(corrections) - set(CORRECTIONS)
    if unknown:
        raise SignificanceError(f"unknown tests/corrections {sorted(unknown)}")
    models = list(per_user)
    metrics = sorted(set.intersection(*(set(v) for v in per_user.values()))) if models else []
    out: list[Comparison] = []
    for test in tests:
        family: list[Comparison] = []
        for metric in metrics:
            for i in range(len(models)):
                for j in range(i + 1, len(models)):
                    a, b = per_user[models[i]][metric], per_user[models[j]][metric]
                    family.append(Comparison(metric, models[i], models[j], TESTS[test](a, b)))
        raw = [c.result.p_value for c in family]
        for corr in corrections:
            for c, adj in zip(family, CORRECTIONS[corr](raw)):
                c.result.adjusted[corr] = adj
        out.extend(family)
    return out
