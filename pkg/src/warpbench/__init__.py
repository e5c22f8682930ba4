"""warpbench: a single-node recommender experimentation engine."""

__version__ = "0.1.0"

from .ingest import Dataset, DatasetStats, IdMap, RawInteraction, Schema, build_dataset, compute_stats, load_interactions
from .seeding import derive_seed

__all__ = [
    "Dataset",
    "DatasetStats",
    "IdMap",
    "RawInteraction",
    "Schema",
    "__version__",
    "build_dataset",
    "compute_stats",
    "derive_seed",
    "load_interactions",
]
