"""Hyperparameter search: grid / random spaces, ASHA pruning, early stopping.

Trials are executed on a bounded thread pool. All scheduler state (rung
records, trial statuses, decision log) lives in the orchestrating thread, so
the workers only ever touch their own trial.
"""
from __future__ import annotations

import itertools
import json
import logging
import math
import time
from collections import deque
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Literal, Mapping, Protocol, Sequence

import numpy as np

from .seeding import derive_seed

logger = logging.getLogger(__name__)

PENDING = "pending"
RUNNING = "running"
STOPPED_BY_SCHEDULER = "stopped-by-scheduler"
STOPPED_EARLY = "stopped-early"
COMPLETED = "completed"
FAILED = "failed"
TIME_LIMIT = "time-limit-exceeded"
TERMINAL = {STOPPED_BY_SCHEDULER, STOPPED_EARLY, COMPLETED, FAILED, TIME_LIMIT}
SELECTABLE = {COMPLETED, STOPPED_EARLY}

DEFAULT_TIMEOUT = 24 * 3600.0


class TuneError(RuntimeError):
    pass


class SearchSpaceError(ValueError):
    pass


# ---------------------------------------------------------------- spaces


@dataclass(frozen=True)
class Categorical:
    values: tuple

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(self.values))
        if not self.values:
            raise SearchSpaceError("categorical domain is empty")

    def grid(self) -> tuple:
        return self.values

    def sample(self, rng: np.random.Generator):
        return self.values[int(rng.integers(len(self.values)))]


@dataclass(frozen=True)
class IntRange:
    low: int
    high: int
    log: bool = False

    def __post_init__(self):
        if self.low > self.high:
            raise SearchSpaceError(f"empty integer range [{self.low}, {self.high}]")
        if self.log and self.low <= 0:
            raise SearchSpaceError("log-scale bounds must be strictly positive")

    def grid(self) -> tuple:
        return tuple(range(self.low, self.high + 1))

    def sample(self, rng: np.random.Generator) -> int:
        if self.log:
            v = math.exp(rng.uniform(math.log(self.low), math.log(self.high + 1)))
            return min(int(v), self.high)
        return int(rng.integers(self.low, self.high + 1))


@dataclass(frozen=True)
class RealRange:
    low: float
    high: float
    log: bool = False

    def __post_init__(self):
        if not self.low < self.high:
            raise SearchSpaceError(f"empty real range [{self.low}, {self.high}]")
        if self.log and self.low <= 0:
            raise SearchSpaceError("log-scale bounds must be strictly positive")

    def grid(self) -> tuple:
        raise SearchSpaceError("grid search needs explicit values for real-valued ranges")

    def sample(self, rng: np.random.Generator) -> float:
        if self.log:
            return float(math.exp(rng.uniform(math.log(self.low), math.log(self.high))))
        return float(rng.uniform(self.low, self.high))


Domain = Categorical | IntRange | RealRange
SearchSpace = Mapping[str, Domain]


def parse_space(raw: Mapping[str, Any]) -> dict[str, Domain]:
    """Build a search space from plain data.

    A list is categorical, a scalar is a one-point categorical, and a mapping
    ``{low, high[, log][, type: int|float]}`` is a range.
    """
    space: dict[str, Domain] = {}
    for name, spec in raw.items():
        if isinstance(spec, Mapping):
            extra = set(spec) - {"low", "high", "log", "type"}
            if extra or not {"low", "high"} <= set(spec):
                raise SearchSpaceError(f"{name}: range needs low/high (optional log, type), got {sorted(spec)}")
            kind = spec.get("type", "int" if isinstance(spec["low"], int) and isinstance(spec["high"], int) else "float")
            cls = IntRange if kind == "int" else RealRange
            space[name] = cls(spec["low"], spec["high"], bool(spec.get("log", False)))
        elif isinstance(spec, (list, tuple)):
            space[name] = Categorical(tuple(spec))
        else:
            space[name] = Categorical((spec,))
    return space


def expand_grid(space: SearchSpace) -> list[dict[str, Any]]:
    """Cartesian product; the first declared parameter varies slowest."""
    names = list(space)
    values = [space[n].grid() for n in names]
    return [dict(zip(names, combo)) for combo in itertools.product(*values)]


def sample_random(space: SearchSpace, n: int, seed: int) -> list[dict[str, Any]]:
    out = []
    for i in range(n):
        rng = np.random.default_rng(derive_seed(seed, "random-search", i))
        out.append({name: dom.sample(rng) for name, dom in space.items()})
    return out


# ---------------------------------------------------------------- stopping rules


@dataclass(frozen=True)
class AshaConfig:
    eta: int = 2
    min_budget: int = 1
    max_budget: int | None = None
    mode: Literal["max", "min"] = "max"

    def __post_init__(self):
        if self.eta < 2:
            raise TuneError("eta must be >= 2")
        if self.min_budget < 1:
            raise TuneError("min_budget must be >= 1")
        if self.max_budget is not None and self.max_budget < self.min_budget:
            raise TuneError("max_budget must be >= min_budget")
        if self.mode not in ("max", "min"):
            raise TuneError(f"unknown metric direction {self.mode!r}")

    def milestones(self, max_budget: int) -> list[int]:
        """Rung budgets r0 * eta^k strictly below the max budget, then the max budget."""
        R = max_budget if self.max_budget is None else min(self.max_budget, max_budget)
        out = []
        r = self.min_budget
        while r < R:
            out.append(r)
            r *= self.eta
        out.append(R)
        return out


def promotion_slots(n_recorded: int, eta: int) -> int:
    # optimistic: the first results at a rung always get a slot
    return max(1, n_recorded // eta)


def asha_decide(rung_records: Sequence[float], value: float, cfg: AshaConfig, is_max_rung: bool = False) -> str:
    """Decision for a trial that just recorded ``value`` at a rung.

    ``rung_records`` holds every result recorded so far at that rung,
    including this one. Returns ``promote`` when fewer than
    ``max(1, floor(n/eta))`` recorded results are strictly better, ``stop``
    otherwise, and ``continue`` at the top rung.
    """
    if is_max_rung:
        return "continue"
    vals = np.asarray(rung_records, dtype=np.float64)
    better = (vals > value).sum() if cfg.mode == "max" else (vals < value).sum()
    return "promote" if better < promotion_slots(vals.size, cfg.eta) else "stop"


def early_stop(history: Sequence[float], patience: int, min_delta: float = 0.0, mode: str = "max") -> bool:
    """True once ``patience`` consecutive evaluations fail to improve on the best by more than ``min_delta``."""
    if patience < 1:
        raise TuneError("patience must be >= 1")
    sign = 1.0 if mode == "max" else -1.0
    best = None
    wait_ = 0
    for x in history:
        x = sign * x
        if best is None or x > best + min_delta:
            best = x
            wait_ = 0
        else:
            wait_ += 1
            if wait_ >= patience:
                return True
    return False


@dataclass(frozen=True)
class EarlyStopping:
    patience: int
    min_delta: float = 0.0


# ---------------------------------------------------------------- trials


class Trainable(Protocol):
    """One configuration being trained.

    ``max_epochs`` is 1 for closed-form models. ``train_to(e)`` brings the
    model to ``e`` completed epochs; ``evaluate()`` returns the validation
    metric.
    """

    max_epochs: int

    def train_to(self, epoch: int) -> None: ...

    def evaluate(self) -> float: ...


@dataclass
class Trial:
    trial_id: int
    config: dict[str, Any]
    seed: int
    status: str = PENDING
    history: list[tuple[int, float]] = field(default_factory=list)
    wall_time: float = 0.0
    epochs_used: int = 0
    rung: int = 0
    error: str | None = None
    stage: str = "train"

    @property
    def final_value(self) -> float | None:
        return self.history[-1][1] if self.history else None

    def set_status(self, status: str) -> None:
        if self.status in TERMINAL:
            raise TuneError(f"trial {self.trial_id} already terminal ({self.status})")
        self.status = status

    def record(self) -> dict:
        return {
            "trial_id": self.trial_id,
            "config": self.config,
            "seed": self.seed,
            "status": self.status,
            "history": [[e, v] for e, v in self.history],
            "epochs_used": self.epochs_used,
            "wall_time": self.wall_time,
            "error": self.error,
            "stage": self.stage,
        }


@dataclass
class StudyResult:
    trials: list[Trial]
    best: Trial | None
    wall_time: float
    decisions: list[dict] = field(default_factory=list)
    best_artifact: Any = None

    @property
    def total_epochs(self) -> int:
        return sum(t.epochs_used for t in self.trials)


def _better(a: float, b: float, mode: str) -> bool:
    return a > b if mode == "max" else a < b


@dataclass
class _Job:
    trial: Trial
    trainable: Any
    targets: list[int]  # milestone epochs this job must reach in order
    eval_every_epoch: bool


def _run_job(job: _Job, timeout: float, es: EarlyStopping | None, mode: str) -> tuple[str, Any]:
    """Train one trial segment in a worker thread. Only touches ``job.trial``."""
    trial, tr = job.trial, job.trainable
    t0 = time.perf_counter()
    budget_left = timeout - trial.wall_time

    def over() -> bool:
        return time.perf_counter() - t0 > budget_left

    try:
        start = trial.epochs_used
        target = job.targets[-1]
        points = range(start + 1, target + 1) if job.eval_every_epoch else job.targets
        for epoch in points:
            tr.train_to(epoch)
            trial.epochs_used = epoch
            if over():
                return TIME_LIMIT, None
            value = float(tr.evaluate())
            if not math.isfinite(value):
                raise FloatingPointError(f"non-finite validation metric {value}")
            trial.history.append((epoch, value))
            if over():
                return TIME_LIMIT, None
            if es is not None and early_stop([v for _, v in trial.history], es.patience, es.min_delta, mode):
                return STOPPED_EARLY, value
        return "milestone", trial.history[-1][1]
    except Exception as exc:  # per-trial isolation
        logger.warning("trial %d failed: %s", trial.trial_id, exc)
        return FAILED, f"{type(exc).__name__}: {exc}"
    finally:
        trial.wall_time += time.perf_counter() - t0


def run_study(
    configs: Sequence[dict[str, Any]],
    make_trainable: Callable[[dict[str, Any], int], Trainable],
    *,
    scheduler: Literal["fifo", "asha"] = "fifo",
    asha: AshaConfig | None = None,
    workers: int = 1,
    timeout: float = DEFAULT_TIMEOUT,
    budget: float | None = None,
    early_stopping: EarlyStopping | None = None,
    mode: str = "max",
    master_seed: int = 0,
    label: str = "trial",
    log_path: str | Path | None = None,
    on_event: Callable[[str, dict], None] | None = None,
    keep_best: Callable[[Trainable], Any] | None = None,
) -> StudyResult:
    """Run every configuration as a trial and pick the best.

    ``make_trainable(config, seed)`` builds the trial's model; the seed is
    ``derive_seed(master_seed, label, trial_id)``. With ``scheduler='asha'``
    trials pause at each rung and continue only when promoted. ``budget``
    bounds the study's total wall time in seconds: trials not yet started when
    it runs out are marked failed. ``keep_best(trainable)`` extracts what is
    retained from the best trial (e.g. the fitted model).
    """
    if workers < 1:
        raise TuneError("workers must be >= 1")
    if scheduler not in ("fifo", "asha"):
        raise TuneError(f"unknown scheduler {scheduler!r}")
    asha = asha or AshaConfig(mode=mode)
    emit = on_event or (lambda stage, payload: None)
    t_start = time.perf_counter()

    trials = [Trial(i, dict(c), derive_seed(master_seed, label, i)) for i, c in enumerate(configs)]
    rung_records: dict[int, list[float]] = {}
    decisions: list[dict] = []
    queue: deque[_Job] = deque()
    trainables: dict[int, Any] = {}
    milestones: dict[int, list[int]] = {}
    best: Trial | None = None
    best_artifact = None
    log_fh = open(log_path, "a", encoding="utf-8") if log_path else None

    def finish(trial: Trial, status: str) -> None:
        nonlocal best, best_artifact
        trial.set_status(status)
        tr = trainables.pop(trial.trial_id, None)
        if status in SELECTABLE and trial.final_value is not None:
            v = trial.final_value
            if best is None or _better(v, best.final_value, mode) or (
                v == best.final_value and trial.trial_id < best.trial_id
            ):
                best = trial
                if keep_best is not None and tr is not None:
                    best_artifact = keep_best(tr)
        emit("trial-end", {"trial_id": trial.trial_id, "status": trial.status, "value": trial.final_value})
        if log_fh:
            log_fh.write(json.dumps(trial.record(), sort_keys=True) + "\n")
            log_fh.flush()

    for trial in trials:
        queue.append(_Job(trial, None, [], early_stopping is not None))

    try:
        with ThreadPoolExecutor(max_workers=workers, thread_name_prefix="trial") as pool:
            # Up to `workers` jobs train at once, but results are committed in
            # dispatch order. Promotions join the back of the FIFO queue, so the
            # decision sequence is the one a single worker would produce.
            inflight: deque[tuple[Future, _Job]] = deque()
            while queue or inflight:
                while queue and len(inflight) < workers:
                    job = queue.popleft()
                    trial = job.trial
                    if trial.status == PENDING:
                        if budget is not None and time.perf_counter() - t_start > budget:
                            trial.error = "study budget exhausted before start"
                            finish(trial, FAILED)
                            continue
                        try:
                            tr = make_trainable(trial.config, trial.seed)
                        except Exception as exc:
                            trial.error = f"{type(exc).__name__}: {exc}"
                            emit("trial-start", {"trial_id": trial.trial_id, "config": trial.config})
                            finish(trial, FAILED)
                            continue
                        trainables[trial.trial_id] = tr
                        ms = asha.milestones(tr.max_epochs) if scheduler == "asha" else [tr.max_epochs]
                        milestones[trial.trial_id] = ms
                        job.trainable = tr
                        job.targets = [ms[0]] if scheduler == "asha" else ms
                        trial.set_status(RUNNING)
                        emit("trial-start", {"trial_id": trial.trial_id, "config": trial.config})
                    inflight.append((pool.submit(_run_job, job, timeout, early_stopping, mode), job))
                if not inflight:
                    continue
                fut, job = inflight.popleft()
                trial = job.trial
                outcome, payload = fut.result()
                if outcome == FAILED:
                    trial.error = payload
                    finish(trial, FAILED)
                elif outcome == TIME_LIMIT:
                    trial.history.clear()
                    trial.error = f"exceeded per-trial timeout of {timeout}s"
                    finish(trial, TIME_LIMIT)
                elif outcome == STOPPED_EARLY:
                    finish(trial, STOPPED_EARLY)
                else:
                    ms = milestones[trial.trial_id]
                    if scheduler == "fifo" or trial.epochs_used >= ms[-1]:
                        finish(trial, COMPLETED)
                        continue
                    rung = ms.index(trial.epochs_used)
                    recs = rung_records.setdefault(rung, [])
                    recs.append(payload)
                    decision = asha_decide(recs, payload, asha)
                    decisions.append({
                        "trial_id": trial.trial_id,
                        "rung": rung,
                        "budget": ms[rung],
                        "value": payload,
                        "recorded": list(recs),
                        "decision": decision,
                    })
                    if decision == "stop":
                        finish(trial, STOPPED_BY_SCHEDULER)
                    else:
                        trial.rung = rung + 1
                        queue.append(_Job(trial, job.trainable, [ms[rung + 1]], job.eval_every_epoch))
    finally:
        if log_fh:
            log_fh.close()

    result = StudyResult(trials, best, time.perf_counter() - t_start, decisions, best_artifact)
    if best is None:
        statuses = sorted({t.status for t in trials})
        raise StudyFailed(f"no trial produced a selectable result (statuses: {statuses})", result)
    return result


class StudyFailed(TuneError):
    def __init__(self, message: str, result: StudyResult):
        super().__init__(message)
        self.result = result


def replay_decisions(decisions: Sequence[dict], eta: int, mode: str = "max") -> list[str]:
    """Re-check every logged ASHA decision; returns a list of violations (empty when valid)."""
    problems = []
    seen: dict[int, list[float]] = {}
    for d in decisions:
        recs = seen.setdefault(d["rung"], [])
        recs.append(d["value"])
        if recs != list(d["recorded"]):
            problems.append(f"trial {d['trial_id']}: rung {d['rung']} record mismatch")
            continue
        expected = asha_decide(recs, d["value"], AshaConfig(eta=eta, mode=mode))
        if expected != d["decision"]:
            problems.append(f"trial {d['trial_id']}: logged {d['decision']} but rule gives {expected}")
    return problems


# ---------------------------------------------------------------- model trials


class ModelTrainable:
    """Adapter running a recommender as a tunable trial.

    Closed-form families fit once (``max_epochs == 1``); BPR-MF trains
    epoch by epoch so a scheduler can pause it between rungs.
    """

    def __init__(self, family: str, params: dict[str, Any], seed: int, train, validation,
                 metric: str = "ndcg", k: int = 10, filter_seen: bool = True):
        from .evaluation import RelevanceJudgments
        from .models import STOCHASTIC, ModelConfig, build_model

        params = dict(params)
        if family in STOCHASTIC and "seed" not in params:
            params["seed"] = seed % (1 << 63)
        self.model = build_model(ModelConfig(family, params))
        self.train, self.validation = train, validation
        self.judgments = RelevanceJudgments.from_dataset(validation)
        self.users = self.judgments.users
        self.metric, self.k, self.filter_seen = metric, k, filter_seen
        self.max_epochs = self.model.hp["epochs"] if self.model.iterative else 1
        self._started = False

    def train_to(self, epoch: int) -> None:
        if not self.model.iterative:
            if not self._started:
                self.model.fit(self.train)
                self._started = True
            return
        if not self._started:
            self.model.start(self.train)
            self._started = True
        self.model.run_epochs(epoch - self.model.epochs_done)

    def evaluate(self) -> float:
        from .evaluation import compute_accuracy
        from .models import recommend

        recs = recommend(self.model, self.users, self.k, self.filter_seen)
        return compute_accuracy(recs, self.judgments, [self.k], [self.metric])[f"{self.metric}@{self.k}"]
