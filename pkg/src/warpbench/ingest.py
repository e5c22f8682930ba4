"""Reading interaction files and building the internal sparse dataset."""
from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Literal, Sequence

import numpy as np
import scipy.sparse as sp

logger = logging.getLogger(__name__)

DedupPolicy = Literal["keep-last", "keep-first", "error"]
KNOWN_COLUMNS = ("user", "item", "rating", "timestamp")


class IngestError(ValueError):
    pass


@dataclass(frozen=True, slots=True)
class RawInteraction:
    user_id: str
    item_id: str
    rating: float = 1.0
    timestamp: int | None = None

    def __post_init__(self):
        if not self.user_id or not self.item_id:
            raise IngestError("user_id and item_id must be non-empty")
        if not math.isfinite(self.rating):
            raise IngestError(f"non-finite rating {self.rating!r}")


@dataclass(frozen=True)
class Schema:
    """Column layout of a delimited interaction file.

    ``columns`` names each field in file order; ``None`` entries mark fields
    that are ignored.
    """

    columns: tuple[str | None, ...] = ("user", "item", "rating", "timestamp")
    sep: str = "\t"
    header: bool = False

    def __post_init__(self):
        object.__setattr__(self, "columns", tuple(self.columns))
        if not self.sep:
            raise IngestError("separator must be non-empty")
        named = [c for c in self.columns if c is not None]
        unknown = set(named) - set(KNOWN_COLUMNS)
        if unknown:
            raise IngestError(f"unknown schema columns: {sorted(unknown)}")
        if len(named) != len(set(named)):
            raise IngestError("schema columns must be unique")
        if "user" not in named or "item" not in named:
            raise IngestError("schema must name at least the user and item columns")


class Records(list):
    """A list of :class:`RawInteraction` that also remembers how many rows were skipped."""

    skipped: int = 0


def load_interactions(path: str | Path, schema: Schema = Schema(), strict: bool = True) -> Records:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"interaction file not found: {path}")

    pos = {name: i for i, name in enumerate(schema.columns) if name is not None}
    width = max(pos.values()) + 1
    u_at, i_at = pos["user"], pos["item"]
    r_at, t_at = pos.get("rating"), pos.get("timestamp")

    out = Records()
    with path.open("r", encoding="utf-8") as fh:
        if schema.header:
            head = fh.readline().rstrip("\r\n").split(schema.sep)
            if len(head) < width:
                raise IngestError(f"{path}: malformed header, expected {width} fields, got {len(head)}")
        lineno = 1 if schema.header else 0
        for line in fh:
            lineno += 1
            line = line.rstrip("\r\n")
            if not line:
                continue
            parts = line.split(schema.sep)
            try:
                if len(parts) < width:
                    raise IngestError(f"expected {width} fields, got {len(parts)}")
                rating = float(parts[r_at]) if r_at is not None else 1.0
                ts = int(parts[t_at]) if t_at is not None else None
                out.append(RawInteraction(parts[u_at].strip(), parts[i_at].strip(), rating, ts))
            except (ValueError, IndexError) as exc:
                if strict:
                    raise IngestError(f"{path}:{lineno}: {exc}") from exc
                out.skipped += 1

    if out.skipped:
        logger.warning("%s: skipped %d malformed rows", path, out.skipped)
    if not out:
        raise IngestError(f"{path}: no valid rows")
    return out


@dataclass(frozen=True)
class IdMap:
    internal_to_raw: tuple[str, ...]
    raw_to_internal: dict[str, int] = field(repr=False, compare=False)

    @classmethod
    def from_sequence(cls, raw_ids: Iterable[str]) -> IdMap:
        ordered = tuple(raw_ids)
        mapping = {s: i for i, s in enumerate(ordered)}
        if len(mapping) != len(ordered):
            raise IngestError("IdMap raw ids must be unique")
        return cls(ordered, mapping)

    def __len__(self) -> int:
        return len(self.internal_to_raw)

    def __contains__(self, raw: object) -> bool:
        return raw in self.raw_to_internal

    def index(self, raw: str) -> int:
        return self.raw_to_internal[raw]

    def raw(self, idx: int) -> str:
        return self.internal_to_raw[idx]

    def digest(self) -> str:
        h = hashlib.sha256()
        for s in self.internal_to_raw:
            h.update(s.encode("utf-8"))
            h.update(b"\x00")
        return h.hexdigest()


@dataclass(frozen=True)
class Dataset:
    """Immutable user x item interaction matrix in CSR layout.

    ``timestamps`` (when present) is aligned with ``interactions.data``.
    """

    interactions: sp.csr_matrix
    user_map: IdMap
    item_map: IdMap
    timestamps: np.ndarray | None = None

    def __post_init__(self):
        X = self.interactions
        if X.shape != (len(self.user_map), len(self.item_map)):
            raise IngestError(f"matrix shape {X.shape} disagrees with id maps")
        if self.timestamps is not None and self.timestamps.shape != X.data.shape:
            raise IngestError("timestamps must align with stored interactions")

    @property
    def n_users(self) -> int:
        return self.interactions.shape[0]

    @property
    def n_items(self) -> int:
        return self.interactions.shape[1]

    @property
    def nnz(self) -> int:
        return self.interactions.nnz

    @property
    def has_timestamps(self) -> bool:
        return self.timestamps is not None

    def coo(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(user, item, rating) arrays in CSR storage order."""
        X = self.interactions
        rows = np.repeat(np.arange(X.shape[0], dtype=np.int64), np.diff(X.indptr))
        return rows, X.indices.astype(np.int64), X.data

    def ids_digest(self) -> str:
        return hashlib.sha256((self.user_map.digest() + self.item_map.digest()).encode()).hexdigest()

    def select(self, keep: np.ndarray) -> Dataset:
        """Sub-dataset holding the stored interactions where ``keep`` is true (same id maps)."""
        rows, cols, vals = self.coo()
        ts = self.timestamps[keep] if self.timestamps is not None else None
        return from_arrays(rows[keep], cols[keep], vals[keep], ts, self.user_map, self.item_map)

    def user_degrees(self) -> np.ndarray:
        return np.diff(self.interactions.indptr)

    def item_degrees(self) -> np.ndarray:
        return np.bincount(self.interactions.indices, minlength=self.n_items)

    def pairs(self) -> set[tuple[int, int]]:
        rows, cols, _ = self.coo()
        return set(zip(rows.tolist(), cols.tolist()))

    def union(self, other: Dataset) -> Dataset:
        if other.user_map is not self.user_map and other.ids_digest() != self.ids_digest():
            raise IngestError("cannot union datasets with different id maps")
        r1, c1, v1 = self.coo()
        r2, c2, v2 = other.coo()
        ts = None
        if self.timestamps is not None and other.timestamps is not None:
            ts = np.concatenate([self.timestamps, other.timestamps])
        return from_arrays(
            np.concatenate([r1, r2]), np.concatenate([c1, c2]), np.concatenate([v1, v2]),
            ts, self.user_map, self.item_map,
        )

    def to_tsv(self, path: str | Path) -> None:
        """Write ``user<TAB>item<TAB>rating[<TAB>timestamp]`` rows in storage order."""
        rows, cols, vals = self.coo()
        with Path(path).open("w", encoding="utf-8") as fh:
            for k, (u, i, r) in enumerate(zip(rows.tolist(), cols.tolist(), vals.tolist())):
                line = f"{self.user_map.raw(u)}\t{self.item_map.raw(i)}\t{r!r}"
                if self.timestamps is not None:
                    line += f"\t{int(self.timestamps[k])}"
                fh.write(line + "\n")


def from_arrays(
    users: np.ndarray,
    items: np.ndarray,
    ratings: np.ndarray,
    timestamps: np.ndarray | None,
    user_map: IdMap,
    item_map: IdMap,
) -> Dataset:
    """Build a canonical CSR dataset from coordinate arrays with unique (user, item) pairs."""
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    order = np.lexsort((items, users))
    users, items = users[order], items[order]
    if users.size > 1:
        dup = (users[1:] == users[:-1]) & (items[1:] == items[:-1])
        if dup.any():
            raise IngestError("duplicate (user, item) pairs")
    n_u, n_i = len(user_map), len(item_map)
    indptr = np.zeros(n_u + 1, dtype=np.int64)
    np.cumsum(np.bincount(users, minlength=n_u), out=indptr[1:])
    X = sp.csr_matrix(
        (np.asarray(ratings, dtype=np.float64)[order], items.astype(np.int32), indptr),
        shape=(n_u, n_i),
    )
    X.has_sorted_indices = True
    ts = None if timestamps is None else np.asarray(timestamps, dtype=np.int64)[order]
    return Dataset(X, user_map, item_map, ts)


def build_dataset(
    records: Sequence[RawInteraction],
    dedup: DedupPolicy = "keep-last",
    user_catalog: Iterable[str] = (),
    item_catalog: Iterable[str] = (),
) -> Dataset:
    """Map raw ids to contiguous indices and assemble the CSR dataset.

    Indices follow first appearance in ``records``. Ids listed in a catalog are
    registered first, in catalog order, so entities without interactions can
    still belong to the index space.

    Duplicate (user, item) pairs are resolved by ``dedup``: ``keep-last`` keeps
    the row with the latest timestamp (later file position wins ties, and
    decides alone when timestamps are absent), ``keep-first`` keeps the first
    row, ``error`` raises.
    """
    if not records:
        raise IngestError("no records")

    users: dict[str, int] = {}
    items: dict[str, int] = {}
    for s in user_catalog:
        users.setdefault(s, len(users))
    for s in item_catalog:
        items.setdefault(s, len(items))

    n = len(records)
    u = np.empty(n, dtype=np.int64)
    i = np.empty(n, dtype=np.int64)
    r = np.empty(n, dtype=np.float64)
    has_ts = records[0].timestamp is not None
    t = np.zeros(n, dtype=np.int64)
    for k, rec in enumerate(records):
        u[k] = users.setdefault(rec.user_id, len(users))
        i[k] = items.setdefault(rec.item_id, len(items))
        r[k] = rec.rating
        if (rec.timestamp is not None) != has_ts:
            raise IngestError("timestamps must be present on all records or on none")
        if has_ts:
            t[k] = rec.timestamp

    n_items = len(items)
    key = u * n_items + i
    pos = np.arange(n)
    if dedup == "keep-first":
        order = np.lexsort((pos, key))
        first = np.ones(n, dtype=bool)
        first[1:] = key[order][1:] != key[order][:-1]
        chosen = order[first]
    elif dedup == "keep-last":
        order = np.lexsort((pos, t, key))
        last = np.ones(n, dtype=bool)
        last[:-1] = key[order][1:] != key[order][:-1]
        chosen = order[last]
    elif dedup == "error":
        uniq, counts = np.unique(key, return_counts=True)
        if (counts > 1).any():
            bad = uniq[counts > 1][0]
            raise IngestError(f"duplicate (user, item) pair at internal index ({bad // n_items}, {bad % n_items})")
        chosen = pos
    else:
        raise IngestError(f"unknown dedup policy {dedup!r}")

    dropped = n - chosen.size
    if dropped:
        logger.info("deduplication (%s) dropped %d rows", dedup, dropped)
    return from_arrays(
        u[chosen], i[chosen], r[chosen], t[chosen] if has_ts else None,
        IdMap.from_sequence(users), IdMap.from_sequence(items),
    )


@dataclass(frozen=True)
class DatasetStats:
    n_users: int
    n_items: int
    n_interactions: int
    sparsity: float

    def as_dict(self) -> dict:
        return {
            "n_users": self.n_users,
            "n_items": self.n_items,
            "n_interactions": self.n_interactions,
            "sparsity": self.sparsity,
        }


def sparsity(n_users: int, n_items: int, n_interactions: int) -> float:
    return 1.0 - n_interactions / (n_users * n_items)


def compute_stats(d: Dataset) -> DatasetStats:
    if d.n_users == 0 or d.n_items == 0:
        raise IngestError("stats undefined for an empty index space")
    return DatasetStats(d.n_users, d.n_items, d.nnz, sparsity(d.n_users, d.n_items, d.nnz))
