"""Declarative experiment configuration (YAML or JSON), strictly validated."""
from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any, Literal

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .evaluation import ALL_METRICS
from .evaluation.significance import CORRECTIONS, TESTS
from .models.base import FAMILIES, ModelConfig, ModelError
from .tune import SearchSpaceError, parse_space

Family = Literal["mostpop", "random", "itemknn", "userknn", "ease", "bprmf"]
assert set(Family.__args__) == set(FAMILIES)


class ConfigError(ValueError):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DatasetBlock(_Strict):
    path: Path
    columns: list[str | None] = ["user", "item", "rating", "timestamp"]
    sep: str = "\t"
    header: bool = False
    strict: bool = True
    dedup: Literal["keep-last", "keep-first", "error"] = "keep-last"
    item_catalog: Path | None = Field(None, description="file whose first column lists every item id")
    catalog_sep: str = "\t"


class FilterBlock(_Strict):
    kind: Literal["rating", "k-core", "cold"]
    mode: Literal["global", "user-mean", "item-mean"] = "global"
    threshold: float = 0.0
    k: int = Field(1, ge=1)
    min_user: int = Field(0, ge=0)
    min_item: int = Field(0, ge=0)


class SplitBlock(_Strict):
    strategy: Literal["holdout", "leave-k-out", "fixed-timestamp", "k-fold"]
    mode: Literal["random", "temporal"] = "random"
    ratio: list[float] = [0.9, 0.1]
    k: int = Field(1, ge=1)
    validation: bool = False
    timestamp: int | None = None
    folds: int = Field(5, ge=2)


class ModelBlock(_Strict):
    name: str | None = None
    family: Family
    params: dict[str, Any] | None = None
    search: dict[str, Any] | None = None

    @model_validator(mode="after")
    def _check(self):
        if self.params is not None and self.search is not None:
            raise ValueError("give either 'params' (fixed configuration) or 'search', not both")
        if self.name is None:
            self.name = self.family
        try:
            if self.params is not None or self.search is None:
                ModelConfig(self.family, dict(self.params or {}))
            else:
                parse_space(self.search)
        except (ModelError, SearchSpaceError) as exc:
            raise ValueError(str(exc)) from exc
        return self


class AshaBlock(_Strict):
    eta: int = Field(2, ge=2)
    min_budget: int = Field(1, ge=1)
    max_budget: int | None = Field(None, ge=1)


class EarlyStoppingBlock(_Strict):
    patience: int = Field(..., ge=1)
    min_delta: float = 0.0


class TuningBlock(_Strict):
    search: Literal["grid", "random"] = "grid"
    n_samples: int = Field(10, ge=0)
    scheduler: Literal["fifo", "asha"] = "fifo"
    workers: int = Field(1, ge=1)
    budget: float | None = Field(None, gt=0)
    timeout: float = Field(24 * 3600.0, gt=0)
    asha: AshaBlock = AshaBlock()
    early_stopping: EarlyStoppingBlock | None = None
    metric: Literal["precision", "recall", "f1", "hitrate", "mrr", "map", "ndcg"] = "ndcg"
    cutoff: int = Field(10, ge=1)
    refit: bool = True


class EvaluationBlock(_Strict):
    cutoffs: list[int] = [10]
    metrics: list[str] = list(ALL_METRICS)
    tests: list[str] = ["t-test", "wilcoxon"]
    corrections: list[str] = ["bonferroni", "bh"]
    relevance_threshold: float | None = None
    filter_seen: bool = True
    long_tail_share: float = Field(0.8, gt=0, lt=1)
    checkpoints: dict[str, Path] | None = None

    @field_validator("cutoffs")
    @classmethod
    def _cutoffs(cls, v):
        if not v or min(v) < 1:
            raise ValueError("cutoffs must be a non-empty list of integers >= 1")
        return v

    @field_validator("metrics")
    @classmethod
    def _metrics(cls, v):
        bad = set(v) - set(ALL_METRICS)
        if bad:
            raise ValueError(f"unknown metrics {sorted(bad)}; known: {list(ALL_METRICS)}")
        return v

    @field_validator("tests")
    @classmethod
    def _tests(cls, v):
        bad = set(v) - set(TESTS)
        if bad:
            raise ValueError(f"unknown tests {sorted(bad)}; known: {sorted(TESTS)}")
        return v

    @field_validator("corrections")
    @classmethod
    def _corrections(cls, v):
        bad = set(v) - set(CORRECTIONS)
        if bad:
            raise ValueError(f"unknown corrections {sorted(bad)}; known: {sorted(CORRECTIONS)}")
        return v


class PowerModelBlock(_Strict):
    cpu_tdp: float = Field(65.0, ge=0)
    gpu_tdp: float = Field(0.0, ge=0)
    ram_w_per_gb: float = Field(0.375, ge=0)


class ReportingBlock(_Strict):
    output_dir: Path = Path("runs/latest")
    power_model: PowerModelBlock = PowerModelBlock()
    carbon_intensity: float = Field(0.475, ge=0)
    sample_interval: float = Field(1.0, gt=0)


class ServeBlock(_Strict):
    checkpoints: dict[str, Path]
    host: str = "127.0.0.1"
    port: int = 8000
    transport: Literal["rest", "stdio"] = "rest"
    default_k: int = Field(10, ge=1)
    filter_seen: bool = True
    aliases: Path | None = None
    protocol_version: str = "2024-11-05"

    @field_validator("checkpoints")
    @classmethod
    def _nonempty(cls, v):
        if not v:
            raise ValueError("at least one checkpoint is required")
        return v


class ExperimentConfig(_Strict):
    seed: int
    dataset: DatasetBlock | None = None
    filters: list[FilterBlock] = []
    split: SplitBlock | None = None
    models: list[ModelBlock] = []
    tuning: TuningBlock = TuningBlock()
    evaluation: EvaluationBlock = EvaluationBlock()
    reporting: ReportingBlock = ReportingBlock()
    serve: ServeBlock | None = None

    @model_validator(mode="after")
    def _unique_names(self):
        names = [m.name for m in self.models]
        dup = {n for n in names if names.count(n) > 1}
        if dup:
            raise ValueError(f"duplicate model names {sorted(dup)}")
        return self

    def digest(self) -> str:
        """Hash of everything that can change results (not output location or worker count)."""
        data = self.model_dump(mode="json", exclude={"reporting": {"output_dir"}, "tuning": {"workers"}, "serve": True})
        return hashlib.sha256(json.dumps(data, sort_keys=True).encode()).hexdigest()


def _format_errors(exc: ValidationError, source: str) -> str:
    lines = [f"{source}: invalid configuration"]
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        msg = err["msg"]
        if err["type"] == "extra_forbidden":
            msg = f"unknown key {err['loc'][-1]!r}"
        elif err["type"] == "missing":
            msg = f"missing required key {err['loc'][-1]!r}"
        lines.append(f"  at {loc}: {msg}")
    return "\n".join(lines)


def _resolve_paths(cfg: ExperimentConfig, base: Path) -> None:
    def fix(p: Path | None) -> Path | None:
        return p if p is None or p.is_absolute() else (base / p)

    if cfg.dataset is not None:
        cfg.dataset.path = fix(cfg.dataset.path)
        cfg.dataset.item_catalog = fix(cfg.dataset.item_catalog)
    if cfg.evaluation.checkpoints:
        cfg.evaluation.checkpoints = {k: fix(v) for k, v in cfg.evaluation.checkpoints.items()}
    cfg.reporting.output_dir = fix(cfg.reporting.output_dir)
    if cfg.serve is not None:
        cfg.serve.checkpoints = {k: fix(v) for k, v in cfg.serve.checkpoints.items()}
        cfg.serve.aliases = fix(cfg.serve.aliases)


def config_from_dict(data: Any, base_dir: str | Path = ".", source: str = "<config>") -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    try:
        cfg = ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_format_errors(exc, source)) from None
    _resolve_paths(cfg, Path(base_dir))
    return cfg


def parse_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML/JSON: {exc}") from None
    return config_from_dict(data, path.parent, str(path))
