"""End-to-end run on a small synthetic catalogue.

Writes a tab-separated interaction log and a YAML config, then runs the same
train pipeline the ``warpbench train`` command uses. Prints the metric table,
the selected hyperparameters and the energy estimate.

    python3 demos/quickstart.py [output_dir]
"""
from __future__ import annotations

import csv
import json
import sys
import tempfile
from pathlib import Path

import numpy as np
import yaml

from warpbench.config import parse_config
from warpbench.pipeline import run_train_pipeline


def write_log(path: Path, n_users: int = 300, n_items: int = 120, seed: int = 0) -> None:
    # popularity-skewed implicit feedback with one timestamp per event
    rng = np.random.default_rng(seed)
    pop = 1.0 / np.arange(1, n_items + 1) ** 0.8
    pop /= pop.sum()
    lines, t = [], 1_600_000_000
    for u in range(n_users):
        for i in rng.choice(n_items, size=int(rng.integers(8, 40)), replace=False, p=pop):
            lines.append(f"user{u}\titem{i}\t{rng.integers(1, 6)}\t{t}")
            t += 1
    path.write_text("\n".join(lines) + "\n")


def main() -> None:
    root = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="warpbench-demo-"))
    root.mkdir(parents=True, exist_ok=True)
    write_log(root / "interactions.tsv")
    config = {
        "seed": 11,
        "dataset": {"path": "interactions.tsv"},
        "filters": [{"kind": "k-core", "k": 3}],
        "split": {"strategy": "holdout", "ratio": [0.8, 0.1, 0.1]},
        "models": [
            {"family": "mostpop"},
            {"family": "itemknn", "search": {"neighbors": [10, 50], "similarity": ["cosine", "jaccard"]}},
            {"family": "ease", "search": {"l2": [10.0, 100.0, 500.0]}},
            {"name": "bpr", "family": "bprmf",
             "search": {"factors": [16, 32], "learning_rate": [0.02, 0.05], "epochs": 12}},
        ],
        "tuning": {"scheduler": "asha", "workers": 2, "metric": "ndcg", "cutoff": 10},
        "evaluation": {"cutoffs": [10, 20], "tests": ["t-test", "wilcoxon"]},
        "reporting": {"output_dir": "run", "sample_interval": 0.1},
    }
    (root / "experiment.yaml").write_text(yaml.safe_dump(config, sort_keys=False))

    cfg = parse_config(root / "experiment.yaml")
    outcome = run_train_pipeline(cfg, [lambda ev: ev.stage == "evaluate" and print(f"evaluated {ev.payload['model']}")])
    out = outcome.output_dir

    rows = list(csv.DictReader((out / "metrics" / "summary.tsv").open(), delimiter="\t"))
    cols = ["ndcg@10", "recall@10", "item_coverage@10", "gini@10", "aplt@10"]
    print("\n" + "model".ljust(9) + "".join(c.rjust(18) for c in cols))
    for row in rows:
        print(row["model"].ljust(9) + "".join(f"{float(row[c]):18.4f}" for c in cols))
    print(f"(all {len(rows[0]) - 1} columns in {out / 'metrics' / 'summary.tsv'})\n")
    print("selected hyperparameters:")
    for name, best in json.loads((out / "stats" / "best_params.json").read_text()).items():
        print(f"  {name:8s} {best['params']}  (validation nDCG@10 {best['validation_score']:.4f})")
    total = json.loads((out / "energy.json").read_text())["total"]
    print(f"\nestimated energy {total['energy_consumed']:.2e} kWh, emissions {total['emissions']:.2e} kg CO2eq")
    print(f"artifacts: {out}  (exit code {outcome.exit_code})")


if __name__ == "__main__":
    main()
