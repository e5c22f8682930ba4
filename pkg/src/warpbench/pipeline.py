"""End-to-end experiment pipelines: train (tune + evaluate), design and eval.

Every stage emits a :class:`PipelineEvent` to the registered hooks, so
callers can observe or log progress without touching pipeline internals.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

from . import __version__
from .config import ConfigError, ExperimentConfig, ModelBlock
from .evaluation import RelevanceJudgments, compare_models, evaluate
from .ingest import Dataset, Schema, build_dataset, compute_stats, load_interactions
from .models import STOCHASTIC, ModelConfig, build_model, load_checkpoint, recommend, save_checkpoint
from .prep import FilterSpec, SplitOutput, SplitSpec, apply_filter, split
from .report import ArtifactBundle, EnergySampler, PowerModel, track_energy, write_artifacts
from .tune import (
    AshaConfig,
    EarlyStopping,
    ModelTrainable,
    StudyFailed,
    expand_grid,
    parse_space,
    run_study,
    sample_random,
)

logger = logging.getLogger(__name__)

STAGES = ("ingest", "filter", "split", "trial-start", "trial-end", "evaluate", "write")


@dataclass(frozen=True)
class PipelineEvent:
    stage: str
    payload: dict
    time: float


Hook = Callable[[PipelineEvent], None]


@dataclass
class RunOutcome:
    """What a pipeline run produced. ``failures`` maps model name to error text."""

    output_dir: Path
    manifest: dict
    reports: dict = field(default_factory=dict)
    failures: dict = field(default_factory=dict)
    events: list = field(default_factory=list)

    @property
    def exit_code(self) -> int:
        return 2 if self.failures else 0


class PipelineError(RuntimeError):
    pass


class _Runner:
    def __init__(self, cfg: ExperimentConfig, hooks: Sequence[Hook] = (), output: str | Path | None = None,
                 seed: int | None = None, workers: int | None = None):
        if seed is not None:
            cfg = cfg.model_copy(update={"seed": seed})
        if workers is not None:
            if workers < 1:
                raise ConfigError("--workers must be >= 1")
            cfg = cfg.model_copy(update={"tuning": cfg.tuning.model_copy(update={"workers": workers})})
        self.cfg = cfg
        self.out = Path(output) if output is not None else Path(cfg.reporting.output_dir)
        self.hooks = list(hooks)
        self.events: list[PipelineEvent] = []
        self.stage_times: dict[str, float] = {}
        self.sampler = EnergySampler(cfg.reporting.sample_interval)

    def abort(self) -> None:
        self.sampler.stop()

    def emit(self, stage: str, **payload: Any) -> None:
        ev = PipelineEvent(stage, payload, time.time())
        self.events.append(ev)
        for hook in self.hooks:
            hook(ev)

    def _timed(self, name: str):
        runner = self

        class _T:
            def __enter__(self):
                self.t0 = time.perf_counter()
                self.ctx = runner.sampler.stage(name)
                self.ctx.__enter__()

            def __exit__(self, *exc):
                self.ctx.__exit__(*exc)
                runner.stage_times[name] = runner.stage_times.get(name, 0.0) + time.perf_counter() - self.t0
                return False

        return _T()

    # ------------------------------------------------------------ data
    def prepare(self) -> tuple[Dataset, SplitOutput, dict]:
        cfg = self.cfg
        if cfg.dataset is None or cfg.split is None:
            raise ConfigError("this command needs 'dataset' and 'split' sections")
        ds = cfg.dataset
        info: dict[str, Any] = {}
        with self._timed("ingest"):
            records = load_interactions(ds.path, Schema(tuple(ds.columns), ds.sep, ds.header), strict=ds.strict)
            catalog = _read_catalog(ds.item_catalog, ds.catalog_sep) if ds.item_catalog else ()
            data = build_dataset(records, ds.dedup, item_catalog=catalog)
            info["skipped_rows"] = records.skipped
            info["raw_stats"] = compute_stats(data).as_dict()
        self.emit("ingest", rows=len(records), skipped=records.skipped, **info["raw_stats"])

        with self._timed("filter"):
            for fb in cfg.filters:
                before = data.nnz
                data = apply_filter(data, FilterSpec(**fb.model_dump()))
                self.emit("filter", kind=fb.kind, removed=before - data.nnz, remaining=data.nnz)
            info["filtered_stats"] = compute_stats(data).as_dict()
        if data.nnz == 0:
            raise PipelineError("filters removed every interaction")

        with self._timed("split"):
            sb = cfg.split
            spec = SplitSpec(sb.strategy, sb.mode, tuple(sb.ratio), sb.k, sb.validation, sb.timestamp, sb.folds,
                             seed=cfg.seed)
            parts = split(data, spec)
        self.emit("split", **parts.provenance()["sizes"], unsplittable_users=parts.unsplittable_users)
        info["split"] = parts.provenance()
        return data, parts, info

    # ------------------------------------------------------------ evaluation
    def _evaluate(self, models: dict, parts: SplitOutput, data: Dataset):
        ev = self.cfg.evaluation
        judg = RelevanceJudgments.from_dataset(parts.test, ev.relevance_threshold)
        users = judg.users
        reports, recs_out = {}, {}
        failures = {}
        with self._timed("evaluate"):
            for name, model in models.items():
                try:
                    recs = recommend(model, users, max(ev.cutoffs), ev.filter_seen)
                    rep = evaluate(recs, judg, model.train, ev.cutoffs, ev.metrics)
                except Exception as exc:  # isolate per model
                    failures[name] = f"evaluation failed: {type(exc).__name__}: {exc}"
                    logger.error("%s: %s", name, failures[name])
                    continue
                reports[name], recs_out[name] = rep, recs
                self.emit("evaluate", model=name, users=int(users.size), metrics=rep.as_dict())
            per_user = {
                name: {k: v.per_user for k, v in rep.values.items() if v.per_user is not None}
                for name, rep in reports.items()
            }
            sig = compare_models(per_user, ev.tests, ev.corrections) if len(per_user) > 1 else []
        return reports, recs_out, sig, failures

    def _finish(self, data: Dataset, info: dict, reports, recs, sig, extra: dict, failures: dict,
                checkpoints=None, study_log=None, best_params=None, command="train") -> RunOutcome:
        samples = self.sampler.stop()
        pm = self.cfg.reporting.power_model
        energy = track_energy(samples, PowerModel(pm.cpu_tdp, pm.gpu_tdp, pm.ram_w_per_gb),
                              self.cfg.reporting.carbon_intensity) if samples else None
        manifest = {
            "command": command,
            "engine_version": __version__,
            "config_digest": self.cfg.digest(),
            "config": self.cfg.model_dump(mode="json"),
            "seed": self.cfg.seed,
            "idmaps_digest": data.ids_digest(),
            "dataset": {k: v for k, v in info.items() if k != "split"},
            "split": info["split"],
            "stage_seconds": self.stage_times,
            "failures": failures,
            "models": sorted(reports),
            **extra,
        }
        bundle = ArtifactBundle(
            manifest=manifest,
            dataset=data,
            metric_reports=reports,
            significance=sig,
            recommendations=recs,
            best_params=best_params or {},
            checkpoints=checkpoints or {},
            study_log=study_log,
            energy=energy,
            extra_stats={"dataset": {"raw": info["raw_stats"], "filtered": info["filtered_stats"],
                                     "skipped_rows": info["skipped_rows"]},
                         "split": info["split"]},
        )
        with self._timed("write"):
            manifest = write_artifacts(bundle, self.out)
        self.emit("write", output_dir=str(self.out), files=len(manifest["artifacts"]))
        return RunOutcome(self.out, manifest, reports, failures, self.events)


def _read_catalog(path: Path, sep: str) -> list[str]:
    out = []
    with Path(path).open(encoding="latin-1") as fh:
        for line in fh:
            line = line.rstrip("\r\n")
            if line:
                out.append(line.split(sep, 1)[0])
    return out


def _configs_for(block: ModelBlock, tuning, seed: int, design: bool) -> list[dict]:
    if design:
        if block.search is not None:
            raise ConfigError(f"model {block.name!r}: design runs need a fixed 'params' block, not 'search'")
        return [dict(block.params or {})]
    if block.search is None:
        return [dict(block.params or {})]
    space = parse_space(block.search)
    if tuning.search == "grid":
        return expand_grid(space)
    return sample_random(space, tuning.n_samples, seed)


def _final_params(family: str, params: dict, seed: int) -> dict:
    params = dict(params)
    if family in STOCHASTIC and "seed" not in params:
        params["seed"] = seed % (1 << 63)
    return params


def run_train_pipeline(cfg: ExperimentConfig, hooks: Sequence[Hook] = (), *, output: str | Path | None = None,
                       seed: int | None = None, workers: int | None = None, design: bool = False) -> RunOutcome:
    """ingest -> filter -> split -> tune each model -> final fit -> test evaluation -> artifacts.

    A model whose study or final fit fails is recorded in ``failures`` and the
    remaining models still run; the outcome's exit code is then 2.
    """
    r = _Runner(cfg, hooks, output, seed, workers)
    cfg = r.cfg
    if not cfg.models:
        raise ConfigError("no models configured")
    for block in cfg.models:  # surface config problems before any work
        _configs_for(block, cfg.tuning, cfg.seed, design)
    r.out.mkdir(parents=True, exist_ok=True)
    r.sampler.start()
    try:
        return _train(r, cfg, design)
    except BaseException:
        r.abort()
        raise


def _train(r: _Runner, cfg: ExperimentConfig, design: bool) -> RunOutcome:
    data, parts, info = r.prepare()
    tuning = cfg.tuning
    tune_on = parts.validation if parts.validation is not None else parts.test
    if parts.validation is None and not design:
        logger.warning("no validation split: hyperparameters are selected on the test split")
    study_log = r.out / "study.log"
    study_log.unlink(missing_ok=True)
    es = EarlyStopping(tuning.early_stopping.patience, tuning.early_stopping.min_delta) if tuning.early_stopping else None
    asha = AshaConfig(tuning.asha.eta, tuning.asha.min_budget, tuning.asha.max_budget, "max")

    models, failures, best_params, checkpoints, studies = {}, {}, {}, {}, {}
    for block in cfg.models:
        name, family = block.name, block.family
        configs = _configs_for(block, tuning, cfg.seed, design)

        def make(config, trial_seed, family=family):
            return ModelTrainable(family, config, trial_seed, parts.train, tune_on, tuning.metric, tuning.cutoff,
                                  cfg.evaluation.filter_seen)

        def relay(stage, payload, name=name):
            r.emit(stage, model=name, **payload)

        with r._timed("tune"):
            try:
                result = run_study(
                    configs, make, scheduler="fifo" if design else tuning.scheduler, asha=asha,
                    workers=tuning.workers, timeout=tuning.timeout, budget=tuning.budget, early_stopping=es,
                    mode="max", master_seed=cfg.seed, label=f"trial/{name}", log_path=study_log,
                    on_event=relay, keep_best=lambda tr: tr.model,
                )
            except StudyFailed as exc:
                failures[name] = str(exc)
                studies[name] = _study_summary(exc.result)
                logger.error("%s: %s", name, exc)
                continue
        studies[name] = _study_summary(result)
        best = result.best
        params = _final_params(family, best.config, best.seed)
        best_params[name] = {"family": family, "params": params, "trial_id": best.trial_id,
                             "validation_score": best.final_value}
        with r._timed("refit"):
            try:
                if tuning.refit and parts.validation is not None and not design:
                    model = build_model(ModelConfig(family, params))
                    if model.iterative:
                        # reuse the epoch count the selected trial actually reached
                        model = build_model(ModelConfig(family, {**params, "epochs": max(best.epochs_used, 1)}))
                        best_params[name]["params"]["epochs"] = max(best.epochs_used, 1)
                    model.fit(parts.fit_data)
                else:
                    model = result.best_artifact
                ckpt = save_checkpoint(model, r.out / "checkpoints" / f"{name}.npz")
            except Exception as exc:
                failures[name] = f"final fit failed: {type(exc).__name__}: {exc}"
                logger.error("%s: %s", name, failures[name])
                continue
        models[name], checkpoints[name] = model, ckpt

    reports, recs, sig, eval_failures = r._evaluate(models, parts, data)
    failures.update(eval_failures)
    return r._finish(data, info, reports, recs, sig, {"studies": studies}, failures, checkpoints, study_log,
                     best_params, command="design" if design else "train")


def run_design_pipeline(cfg: ExperimentConfig, hooks: Sequence[Hook] = (), **kw) -> RunOutcome:
    """Each model runs its single fixed configuration; no search, no scheduler."""
    return run_train_pipeline(cfg, hooks, design=True, **kw)


def run_eval_pipeline(cfg: ExperimentConfig, hooks: Sequence[Hook] = (), *, checkpoints: dict | None = None,
                      output: str | Path | None = None, seed: int | None = None,
                      workers: int | None = None) -> RunOutcome:
    """Evaluate saved checkpoints on the configured test split. Never trains."""
    r = _Runner(cfg, hooks, output, seed, workers)
    refs = dict(checkpoints or r.cfg.evaluation.checkpoints or {})
    if not refs:
        raise ConfigError("eval needs checkpoints (evaluation.checkpoints or --checkpoints)")
    for name, path in refs.items():
        if not Path(path).is_file():
            raise PipelineError(f"checkpoint {name!r} not found: {path}")
    r.out.mkdir(parents=True, exist_ok=True)
    r.sampler.start()
    try:
        return _eval(r, refs)
    except BaseException:
        r.abort()
        raise


def _eval(r: _Runner, refs: dict) -> RunOutcome:
    data, parts, info = r.prepare()
    digest = data.ids_digest()
    models, failures = {}, {}
    for name, path in refs.items():
        try:
            models[name] = load_checkpoint(path, expected_idmaps_digest=digest)
        except Exception as exc:
            failures[name] = f"{type(exc).__name__}: {exc}"
            logger.error("%s: %s", name, failures[name])
    reports, recs, sig, eval_failures = r._evaluate(models, parts, data)
    failures.update(eval_failures)
    return r._finish(data, info, reports, recs, sig, {"checkpoints": {k: str(v) for k, v in refs.items()}}, failures,
                     command="eval")


def _study_summary(result) -> dict:
    return {
        "wall_time": result.wall_time,
        "total_epochs": result.total_epochs,
        "best_trial": None if result.best is None else result.best.trial_id,
        "statuses": {t.trial_id: t.status for t in result.trials},
        "asha_decisions": result.decisions,
    }


def checkpoints_in(directory: str | Path) -> dict[str, Path]:
    return {p.stem: p for p in sorted(Path(directory).glob("*.npz"))}


__all__ = [
    "PipelineError", "PipelineEvent", "RunOutcome", "STAGES", "checkpoints_in", "run_design_pipeline",
    "run_eval_pipeline", "run_train_pipeline",
]

