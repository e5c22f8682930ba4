from __future__ import annotations

import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_dataset
from synthetic import curve_factory
from warpbench.prep import SplitSpec, split
from warpbench.tune import (
    COMPLETED,
    FAILED,
    STOPPED_BY_SCHEDULER,
    STOPPED_EARLY,
    TIME_LIMIT,
    AshaConfig,
    EarlyStopping,
    IntRange,
    ModelTrainable,
    RealRange,
    SearchSpaceError,
    StudyFailed,
    Trial,
    TuneError,
    asha_decide,
    early_stop,
    expand_grid,
    parse_space,
    replay_decisions,
    run_study,
    sample_random,
)


def test_grid_product_order():
    space = parse_space({"a": [1, 2], "b": ["x", "y", "z"], "c": 0.5})
    grid = expand_grid(space)
    assert len(grid) == 6
    assert grid[0] == {"a": 1, "b": "x", "c": 0.5} and grid[1] == {"a": 1, "b": "y", "c": 0.5}
    assert grid == [dict(zip("abc", t)) for t in itertools.product([1, 2], "xyz", [0.5])]


def test_space_errors():
    with pytest.raises(SearchSpaceError):
        parse_space({"a": []})
    with pytest.raises(SearchSpaceError):
        parse_space({"a": {"low": 3, "high": 1}})
    with pytest.raises(SearchSpaceError):
        parse_space({"a": {"low": 0.0, "high": 1.0, "log": True}})
    with pytest.raises(SearchSpaceError):
        expand_grid({"a": RealRange(0.0, 1.0)})
    assert expand_grid({"a": IntRange(2, 4)}) == [{"a": 2}, {"a": 3}, {"a": 4}]


def test_random_search_seeded_and_log_uniform():
    space = parse_space({"lr": {"low": 1e-4, "high": 1e-1, "log": True}, "k": {"low": 1, "high": 5}})
    a, b = sample_random(space, 50, 3), sample_random(space, 50, 3)
    assert a == b and sample_random(space, 0, 3) == []
    assert all(1e-4 <= c["lr"] <= 1e-1 and 1 <= c["k"] <= 5 for c in a)
    # exponent histogram is roughly uniform over 10^4 draws (chi-square, 3 dof)
    from scipy.stats import chisquare

    exps = np.log10([c["lr"] for c in sample_random(space, 10_000, 9)])
    counts, _ = np.histogram(exps, bins=[-4, -3, -2, -1])
    assert chisquare(counts).pvalue > 0.001


def test_milestones():
    assert AshaConfig(eta=2).milestones(10) == [1, 2, 4, 8, 10]
    assert AshaConfig(eta=3, min_budget=1).milestones(9) == [1, 3, 9]
    assert AshaConfig(eta=2, max_budget=4).milestones(10) == [1, 2, 4]
    with pytest.raises(TuneError):
        AshaConfig(eta=1)


def test_asha_rule():
    cfg = AshaConfig(eta=2)
    assert asha_decide([0.5], 0.5, cfg) == "promote"  # first arrival always gets the slot
    assert asha_decide([0.5, 0.4], 0.4, cfg) == "stop"
    assert asha_decide([0.5, 0.6], 0.6, cfg) == "promote"
    assert asha_decide([0.1, 0.2, 0.3, 0.4], 0.3, cfg) == "promote"  # 1 better < floor(4/2)
    assert asha_decide([0.1, 0.2, 0.3, 0.4], 0.2, cfg) == "stop"
    assert asha_decide([1.0], 0.0, cfg, is_max_rung=True) == "continue"
    assert asha_decide([0.5, 0.4], 0.4, AshaConfig(eta=2, mode="min")) == "promote"


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=20), st.integers(2, 4))
def test_asha_promotes_only_top_fraction(values, eta):
    cfg = AshaConfig(eta=eta)
    for n in range(1, len(values) + 1):
        recs = values[:n]
        v = recs[-1]
        better = sum(x > v for x in recs)
        assert (asha_decide(recs, v, cfg) == "promote") == (better < max(1, n // eta))


def test_early_stop_rule():
    assert not early_stop([0.1, 0.2, 0.3], patience=2)
    assert early_stop([0.3, 0.3, 0.3], patience=2)
    assert not early_stop([0.3, 0.31, 0.3], patience=2, min_delta=0.0)
    assert early_stop([0.3, 0.305, 0.309], patience=2, min_delta=0.01)
    assert early_stop([0.5, 0.4, 0.3], patience=2, mode="min") is False
    with pytest.raises(TuneError):
        early_stop([1.0], patience=0)


def test_trial_terminal_states_are_final():
    t = Trial(0, {}, 1)
    t.set_status(COMPLETED)
    with pytest.raises(TuneError):
        t.set_status(FAILED)


QUALITIES = [0.3, 0.9, 0.5, 0.7, 0.2, 0.8, 0.4, 0.6]


def test_fifo_study_picks_best_and_logs(tmp_path):
    log = tmp_path / "study.log"
    events = []
    res = run_study([{"quality": q} for q in QUALITIES], curve_factory(), workers=3, log_path=log,
                    on_event=lambda s, p: events.append((s, p["trial_id"])))
    assert res.best.trial_id == 1
    assert res.total_epochs == 80
    assert all(t.status == COMPLETED for t in res.trials)
    lines = [json.loads(x) for x in log.read_text().splitlines()]
    assert sorted(x["trial_id"] for x in lines) == list(range(8))
    assert sum(1 for s, _ in events if s == "trial-start") == 8
    assert sum(1 for s, _ in events if s == "trial-end") == 8


def test_trial_seeds_are_derived_and_stable():
    seeds = []

    def make(config, seed):
        seeds.append(seed)
        return curve_factory()(config, seed)

    run_study([{"quality": q} for q in QUALITIES[:3]], make, master_seed=5)
    again = [t.seed for t in run_study([{"quality": q} for q in QUALITIES[:3]], curve_factory(), master_seed=5).trials]
    assert seeds == again and len(set(seeds)) == 3


@pytest.mark.parametrize("workers", [1, 3])
def test_asha_study_replays_and_saves_epochs(workers):
    res = run_study([{"quality": q} for q in QUALITIES], curve_factory(), scheduler="asha",
                    asha=AshaConfig(eta=2), workers=workers)
    assert replay_decisions(res.decisions, eta=2) == []
    assert res.best.trial_id == 1
    assert res.total_epochs < 80
    stopped = [t for t in res.trials if t.status == STOPPED_BY_SCHEDULER]
    assert stopped and all(t.epochs_used < 10 for t in stopped)


def test_asha_worst_first_order_promotes_everything():
    # ascending quality: every arrival is the best so far at its rung
    res = run_study([{"quality": q} for q in sorted(QUALITIES)], curve_factory(), scheduler="asha", workers=1)
    assert res.total_epochs == 80


def test_replay_detects_tampering():
    res = run_study([{"quality": q} for q in QUALITIES], curve_factory(), scheduler="asha", workers=1)
    bad = [dict(d) for d in res.decisions]
    i = next(k for k, d in enumerate(bad) if d["decision"] == "stop")
    bad[i]["decision"] = "promote"
    assert replay_decisions(bad, eta=2)


def test_failed_trial_is_isolated():
    configs = [{"quality": 0.9, "fail_at": 3}, {"quality": 0.5}]
    res = run_study(configs, curve_factory())
    assert res.trials[0].status == FAILED and "synthetic failure" in res.trials[0].error
    assert res.best.trial_id == 1


def test_all_failed_raises_with_result():
    with pytest.raises(StudyFailed) as exc:
        run_study([{"quality": 0.5, "fail_at": 1}], curve_factory())
    assert exc.value.result.trials[0].status == FAILED


def test_timeout_marks_time_limit():
    res = run_study([{"quality": 0.9, "sleep": 0.05}, {"quality": 0.1}], curve_factory(), timeout=0.12)
    assert res.trials[0].status == TIME_LIMIT and res.trials[0].history == []
    assert res.best.trial_id == 1


def test_early_stopping_trials_are_selectable():
    configs = [{"quality": 0.9, "plateau_after": 4}, {"quality": 0.5}]
    res = run_study(configs, curve_factory(), early_stopping=EarlyStopping(patience=2))
    assert res.trials[0].status == STOPPED_EARLY and res.trials[0].epochs_used == 6
    assert res.trials[1].status == COMPLETED
    assert res.best.trial_id == 0


def test_ties_go_to_lowest_trial_id():
    res = run_study([{"quality": 0.5}, {"quality": 0.5}, {"quality": 0.5}], curve_factory(), workers=3)
    assert res.best.trial_id == 0


def test_budget_exhaustion_fails_unstarted_trials():
    res = run_study([{"quality": 0.5, "sleep": 0.02}] + [{"quality": 0.9}] * 3, curve_factory(), workers=1, budget=0.05)
    assert res.trials[0].status == COMPLETED
    assert all(t.status == FAILED for t in res.trials[1:])


def test_model_trainable_on_real_data():
    d = random_dataset(np.random.default_rng(0), 30, 20, 0.3)
    parts = split(d, SplitSpec("holdout", ratio=(0.7, 0.15, 0.15), seed=1))
    configs = [{"factors": 4, "learning_rate": 0.05, "epochs": 4}, {"factors": 8, "learning_rate": 0.05, "epochs": 4}]
    res = run_study(configs, lambda c, s: ModelTrainable("bprmf", c, s, parts.train, parts.validation),
                    scheduler="asha", workers=2, keep_best=lambda tr: tr.model)
    assert res.best_artifact.hp["seed"] == res.best.seed % (1 << 63)
    assert replay_decisions(res.decisions, 2) == []


class _JitterCurve:
    """Curve trainable whose epochs take seed-dependent time, scrambling completion order."""

    def __init__(self, quality, seed):
        from synthetic import CurveTrainable

        self.inner = CurveTrainable(quality)
        self.max_epochs = self.inner.max_epochs
        self.delay = (seed % 7) * 0.002

    def train_to(self, epoch):
        import time

        time.sleep(self.delay)
        self.inner.train_to(epoch)

    def evaluate(self):
        return self.inner.evaluate()


def test_asha_decisions_do_not_depend_on_worker_count():
    def run(workers):
        res = run_study([{"quality": q} for q in QUALITIES], lambda c, s: _JitterCurve(c["quality"], s),
                        scheduler="asha", asha=AshaConfig(eta=2), workers=workers, master_seed=3)
        return res.decisions, [(t.status, t.epochs_used) for t in res.trials], res.best.trial_id

    serial = run(1)
    assert run(3) == serial and run(6) == serial
