"""Run artifacts and power-model energy / carbon accounting.

Energy figures are estimates from a configured power model (TDP x sampled
utilization), not hardware counter readings.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping, Sequence

import numpy as np

from . import __version__
from .ingest import Dataset

logger = logging.getLogger(__name__)

J_PER_KWH = 3.6e6
DEFAULT_CARBON_INTENSITY = 0.475  # kg CO2eq / kWh

LAYOUT = ("manifest.json", "metrics/", "stats/", "recs/", "checkpoints/", "study.log", "energy.json")


class ArtifactError(RuntimeError):
    pass


class DigestMismatch(ArtifactError):
    pass


# ---------------------------------------------------------------- energy


@dataclass(frozen=True)
class PowerModel:
    cpu_tdp: float = 65.0
    gpu_tdp: float = 0.0
    ram_w_per_gb: float = 0.375

    def __post_init__(self):
        if min(self.cpu_tdp, self.gpu_tdp, self.ram_w_per_gb) < 0:
            raise ValueError("power model values must be >= 0")


@dataclass(frozen=True)
class PowerSample:
    dt: float
    cpu_util: float = 0.0
    gpu_util: float = 0.0
    ram_gb: float = 0.0
    stage: str = "run"


@dataclass
class EnergyReport:
    """Field names follow the usual Green-AI report rows (units in the comments)."""

    emissions: float  # kg CO2eq
    emissions_rate: float  # kg CO2eq / h
    cpu_power: float  # W, mean modelled draw
    gpu_power: float  # W
    cpu_energy: float  # kWh
    gpu_energy: float  # kWh
    ram_energy: float  # kWh
    energy_consumed: float  # kWh
    peak_ram: float  # GB
    carbon_intensity: float  # kg CO2eq / kWh
    duration: float  # s
    estimate: bool = True

    def as_dict(self) -> dict:
        return asdict(self)

    def rows(self) -> dict[str, float]:
        """The measured quantities under their conventional row labels (metadata excluded)."""
        return {label: getattr(self, name) for name, label in ROW_LABELS.items()}


# measured fields -> row labels of the usual Green-AI summary table
ROW_LABELS = {
    "emissions": "Emissions",
    "emissions_rate": "Emissions Rate",
    "cpu_power": "CPU Power",
    "gpu_power": "GPU Power",
    "cpu_energy": "CPU Energy",
    "gpu_energy": "GPU Energy",
    "ram_energy": "RAM Energy",
    "energy_consumed": "Energy Consumed",
    "peak_ram": "Peak RAM Usage",
}
METADATA_FIELDS = ("carbon_intensity", "duration", "estimate")


def _report(samples: Sequence[PowerSample], pm: PowerModel, intensity: float) -> EnergyReport:
    dt = np.array([s.dt for s in samples], dtype=np.float64)
    if (dt <= 0).any():
        raise ValueError("sample intervals must be > 0")
    cpu = np.array([s.cpu_util for s in samples]) * pm.cpu_tdp
    gpu = np.array([s.gpu_util for s in samples]) * pm.gpu_tdp
    ram = np.array([s.ram_gb for s in samples]) * pm.ram_w_per_gb
    seconds = float(dt.sum())
    cpu_e = float((cpu * dt).sum() / J_PER_KWH)
    gpu_e = float((gpu * dt).sum() / J_PER_KWH)
    ram_e = float((ram * dt).sum() / J_PER_KWH)
    total = cpu_e + gpu_e + ram_e
    emissions = total * intensity
    hours = seconds / 3600.0
    return EnergyReport(
        emissions=emissions,
        emissions_rate=emissions / hours if hours > 0 else 0.0,
        cpu_power=cpu_e * J_PER_KWH / seconds if seconds > 0 else 0.0,
        gpu_power=gpu_e * J_PER_KWH / seconds if seconds > 0 else 0.0,
        cpu_energy=cpu_e,
        gpu_energy=gpu_e,
        ram_energy=ram_e,
        energy_consumed=total,
        peak_ram=max((s.ram_gb for s in samples), default=0.0),
        carbon_intensity=intensity,
        duration=seconds,
    )


def track_energy(
    samples: Iterable[PowerSample | tuple],
    power_model: PowerModel = PowerModel(),
    intensity: float = DEFAULT_CARBON_INTENSITY,
) -> dict[str, EnergyReport]:
    """Integrate power samples into per-stage reports plus a ``total`` entry.

    Tuples are read as ``(dt, cpu_util, gpu_util, ram_gb[, stage])``.
    """
    samples = [s if isinstance(s, PowerSample) else PowerSample(*s) for s in samples]
    stages: dict[str, list[PowerSample]] = {}
    for s in samples:
        stages.setdefault(s.stage, []).append(s)
    out = {name: _report(group, power_model, intensity) for name, group in stages.items()}
    out["total"] = _report(samples, power_model, intensity) if samples else _report([], power_model, intensity)
    return out


class EnergySampler:
    """Background thread sampling process CPU share and resident memory.

    Use :meth:`stage` to tag samples with the pipeline stage currently running.
    """

    def __init__(self, interval: float = 1.0):
        self.interval = interval
        self.samples: list[PowerSample] = []
        self._stage = "setup"
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None
        self._lock = threading.Lock()

    def _take(self, proc, last: float) -> float:
        now = time.perf_counter()
        util = min(1.0, proc.cpu_percent(None) / 100.0 / max(os.cpu_count() or 1, 1))
        rss = proc.memory_info().rss / 1024**3
        with self._lock:
            if now > last:
                self.samples.append(PowerSample(now - last, util, 0.0, rss, self._stage))
        return now

    def _loop(self) -> None:
        import psutil

        proc = psutil.Process()
        proc.cpu_percent(None)
        last = time.perf_counter()
        while not self._stop.wait(self.interval):
            last = self._take(proc, last)
        self._take(proc, last)

    def start(self) -> EnergySampler:
        self._thread = threading.Thread(target=self._loop, name="energy-sampler", daemon=True)
        self._thread.start()
        return self

    def stop(self) -> list[PowerSample]:
        self._stop.set()
        if self._thread is not None:
            self._thread.join()
        return self.samples

    @contextmanager
    def stage(self, name: str) -> Iterator[None]:
        prev = self._stage
        with self._lock:
            self._stage = name
        try:
            yield
        finally:
            with self._lock:
                self._stage = prev


# ---------------------------------------------------------------- artifacts


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_json(path: Path, obj: Any) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n", encoding="utf-8")
    return path


def _json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def write_recommendations(recs, user_map, item_map, path: str | Path) -> Path:
    """TSV rows ``raw_user \\t raw_item \\t rank \\t score``, users in ascending internal index."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    order = np.argsort(recs.users, kind="stable")
    with path.open("w", encoding="utf-8") as fh:
        for row in order.tolist():
            u = user_map.raw(int(recs.users[row]))
            for rank, (item, score) in enumerate(recs.for_user(row), start=1):
                fh.write(f"{u}\t{item_map.raw(item)}\t{rank}\t{score!r}\n")
    return path


def read_recommendations(path: str | Path, user_map, item_map) -> dict[int, list[tuple[int, float]]]:
    out: dict[int, list[tuple[int, float]]] = {}
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            u, i, rank, score = line.rstrip("\n").split("\t")
            lst = out.setdefault(user_map.index(u), [])
            if int(rank) != len(lst) + 1:
                raise ArtifactError(f"{path}: rank {rank} out of sequence for user {u}")
            lst.append((item_map.index(i), float(score)))
    return out


def write_metric_table(reports: Mapping[str, Any], path: Path) -> Path:
    """``model`` x ``metric@K`` table (TSV), metrics in sorted column order."""
    keys = sorted({k for r in reports.values() for k in r.values})
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        fh.write("model\t" + "\t".join(keys) + "\n")
        for name in sorted(reports):
            vals = reports[name].values
            fh.write(name + "\t" + "\t".join(repr(vals[k].aggregate) if k in vals else "" for k in keys) + "\n")
    return path


def write_per_user(report, user_map, path: Path) -> Path:
    keys = sorted(k for k, v in report.values.items() if v.per_user is not None)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        fh.write("user\t" + "\t".join(keys) + "\n")
        for row, u in enumerate(report.users.tolist()):
            fh.write(user_map.raw(u) + "\t" + "\t".join(repr(float(report.values[k].per_user[row])) for k in keys) + "\n")
    return path


@dataclass
class ArtifactBundle:
    """Everything a run persists. Fields left empty are simply not written."""

    manifest: dict = field(default_factory=dict)
    dataset: Dataset | None = None
    metric_reports: dict = field(default_factory=dict)
    significance: list = field(default_factory=list)
    recommendations: dict = field(default_factory=dict)
    best_params: dict = field(default_factory=dict)
    checkpoints: dict = field(default_factory=dict)
    study_log: Path | None = None
    energy: dict | None = None
    extra_stats: dict = field(default_factory=dict)


def write_artifacts(bundle: ArtifactBundle, out_dir: str | Path) -> dict:
    """Write the fixed layout and, last, ``manifest.json`` with SHA-256 digests of every other file."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise ArtifactError(f"output directory not writable: {out}: {exc}") from exc

    ds = bundle.dataset
    if bundle.metric_reports:
        write_metric_table(bundle.metric_reports, out / "metrics" / "summary.tsv")
        for name, rep in bundle.metric_reports.items():
            if ds is not None:
                write_per_user(rep, ds.user_map, out / "metrics" / "per_user" / f"{name}.tsv")
    for name, recs in bundle.recommendations.items():
        write_recommendations(recs, ds.user_map, ds.item_map, out / "recs" / f"{name}.tsv")
    stats = dict(bundle.extra_stats)
    for name, obj in stats.items():
        write_json(out / "stats" / f"{name}.json", obj)
    if bundle.significance:
        write_json(out / "stats" / "significance.json", [c.as_dict() for c in bundle.significance])
    if bundle.best_params:
        write_json(out / "stats" / "best_params.json", bundle.best_params)
    for name, src in bundle.checkpoints.items():
        src = Path(src)
        dst = out / "checkpoints" / f"{name}.npz"
        if src.resolve() != dst.resolve():
            dst.parent.mkdir(parents=True, exist_ok=True)
            dst.write_bytes(src.read_bytes())
    if bundle.study_log is not None and Path(bundle.study_log).resolve() != (out / "study.log").resolve():
        (out / "study.log").write_bytes(Path(bundle.study_log).read_bytes())
    if bundle.energy is not None:
        write_json(out / "energy.json", {k: v.as_dict() for k, v in bundle.energy.items()})

    files = sorted(p for p in out.rglob("*") if p.is_file() and p.name != "manifest.json")
    manifest = dict(bundle.manifest)
    manifest.setdefault("engine_version", __version__)
    manifest["artifacts"] = {p.relative_to(out).as_posix(): sha256_file(p) for p in files}
    write_json(out / "manifest.json", manifest)
    return manifest


def verify_artifacts(out_dir: str | Path) -> dict:
    out = Path(out_dir)
    manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
    for rel, digest in manifest["artifacts"].items():
        p = out / rel
        if not p.is_file():
            raise DigestMismatch(f"{rel}: missing")
        if sha256_file(p) != digest:
            raise DigestMismatch(f"{rel}: digest mismatch")
    return manifest
