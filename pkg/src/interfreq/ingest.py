"""Dataset I/O and per-group preprocessing.

Groups are (serving cell, alternative frequency) combinations; every model
is fitted on one group. Missing per-cell entries are imputed with the
reporting floor before standardization, so an undetected cell reads as a
very weak one.
"""

from __future__ import annotations

import csv
import math
import zlib
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .core import (
    RSRP_RANGE_DBM,
    RSRQ_RANGE_DB,
    ClassLabel,
    ContractError,
    GroupKey,
    InvalidMeasurementError,
    MeasurementRecord,
)

RSRP_FLOOR_DBM = RSRP_RANGE_DBM[0]
RSRQ_FLOOR_DB = RSRQ_RANGE_DB[0]
DEBUG_COLUMNS = ("rssi_lin_serving", "rsrp_lin_serving", "rssi_lin_alt", "rsrp_lin_alt")

# stream ids for per-group random draws
STREAM_SAMPLE = 1
STREAM_SPLIT = 2
STREAM_OVERSAMPLE = 3
STREAM_MODEL = 4


class SchemaError(ValueError):
    """The dataset file does not follow the canonical CSV layout."""


def group_hash(key: GroupKey) -> int:
    return zlib.crc32("|".join(key).encode("utf-8"))


def group_rng(seed: int, key: GroupKey, stream: int) -> np.random.Generator:
    """Random stream tied to (seed, group, purpose); independent of group order."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(group_hash(key), stream)))


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass
class GroupedDataset:
    """Records keyed by (cell id, alternative frequency id), keys kept sorted."""

    groups: Dict[GroupKey, List[MeasurementRecord]]
    m: int

    def __post_init__(self):
        self.groups = {k: list(self.groups[k]) for k in sorted(self.groups)}
        for key, recs in self.groups.items():
            for r in recs:
                if r.group_key != key:
                    raise SchemaError(f"record keyed {r.group_key} stored under {key}")
                if r.m != self.m:
                    raise SchemaError(f"group {key}: record has m={r.m}, dataset m={self.m}")

    @classmethod
    def from_records(cls, records: Iterable[MeasurementRecord], m: int) -> "GroupedDataset":
        groups: Dict[GroupKey, List[MeasurementRecord]] = {}
        for r in records:
            groups.setdefault(r.group_key, []).append(r)
        return cls(groups, m)

    @property
    def feature_dim(self) -> int:
        return 2 * self.m

    def __len__(self) -> int:
        return sum(len(v) for v in self.groups.values())

    def records(self) -> List[MeasurementRecord]:
        return [r for recs in self.groups.values() for r in recs]

    def sizes(self) -> Dict[GroupKey, int]:
        return {k: len(v) for k, v in self.groups.items()}


# --- CSV -------------------------------------------------------------------

def csv_header(m: int, debug: bool = False) -> List[str]:
    cols = ["cell_id", "alt_freq_id", "serving_index"]
    cols += [f"rsrp_{i}" for i in range(1, m + 1)]
    cols += [f"rsrq_{i}" for i in range(1, m + 1)]
    cols.append("y")
    if debug:
        cols += list(DEBUG_COLUMNS)
    return cols


def _fmt(v: Optional[float]) -> str:
    return "" if v is None else repr(float(v))


def record_row(rec: MeasurementRecord) -> List[str]:
    return ([rec.group_key[0], rec.group_key[1], str(rec.serving_index + 1)]
            + [_fmt(v) for v in rec.rsrp] + [_fmt(v) for v in rec.rsrq] + [_fmt(rec.y)])


def write_csv(path, records: Sequence[MeasurementRecord], m: int,
              debug_rows: Optional[Sequence[dict]] = None) -> None:
    """Write records (serving_index one-based, shortest round-trip floats)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(csv_header(m, debug=debug_rows is not None))
        for i, rec in enumerate(records):
            row = record_row(rec)
            if debug_rows is not None:
                row += [_fmt(debug_rows[i][c]) for c in DEBUG_COLUMNS]
            writer.writerow(row)


def _parse_header(header: List[str]) -> Tuple[int, bool]:
    n_debug = sum(1 for c in header if c in DEBUG_COLUMNS)
    if n_debug not in (0, len(DEBUG_COLUMNS)):
        raise SchemaError("debug columns must appear all together or not at all")
    core_cols = header[:len(header) - n_debug]
    if (len(core_cols) - 4) % 2 or len(core_cols) < 6:
        raise SchemaError(f"cannot infer m from header {header}")
    m = (len(core_cols) - 4) // 2
    if header != csv_header(m, debug=n_debug > 0):
        raise SchemaError(f"header does not match canonical layout for m={m}: {header}")
    return m, n_debug > 0


def _parse_optional(text: str, line: int, col: str) -> Optional[float]:
    if text.strip() == "":
        return None
    try:
        return float(text)
    except ValueError:
        raise SchemaError(f"line {line}, column {col}: cannot parse {text!r}") from None


def load_csv(path, with_debug: bool = False):
    """Parse a dataset CSV into a GroupedDataset.

    With ``with_debug=True`` also returns the debug columns as a list of
    dicts (one per row, file order) or ``None`` when the file has none.
    """
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file, header required") from None
        m, has_debug = _parse_header(header)
        records, debug = [], []
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise SchemaError(f"line {line}: expected {len(header)} fields, got {len(row)}")
            try:
                serving = int(row[2]) - 1
            except ValueError:
                raise SchemaError(f"line {line}, column serving_index: {row[2]!r}") from None
            rsrp = tuple(_parse_optional(row[3 + i], line, header[3 + i]) for i in range(m))
            rsrq = tuple(_parse_optional(row[3 + m + i], line, header[3 + m + i]) for i in range(m))
            y = _parse_optional(row[3 + 2 * m], line, "y")
            if y is None:
                raise SchemaError(f"line {line}, column y: missing")
            try:
                rec = MeasurementRecord((row[0], row[1]), serving, rsrp, rsrq, y)
            except InvalidMeasurementError as exc:
                raise InvalidMeasurementError(f"line {line}: {exc}") from None
            records.append(rec)
            if has_debug:
                debug.append({c: float(row[3 + 2 * m + 1 + k]) for k, c in enumerate(DEBUG_COLUMNS)})
    ds = GroupedDataset.from_records(records, m)
    if with_debug:
        return ds, (debug if has_debug else None)
    return ds


# --- features ---------------------------------------------------------------

def raw_features(records: Sequence[MeasurementRecord]) -> np.ndarray:
    """(n, 2m) matrix of [rsrp_1..rsrp_m, rsrq_1..rsrq_m] with floor imputation."""
    if not records:
        return np.zeros((0, 0))
    m = records[0].m
    out = np.empty((len(records), 2 * m))
    for i, r in enumerate(records):
        out[i, :m] = [RSRP_FLOOR_DBM if v is None else v for v in r.rsrp]
        out[i, m:] = [RSRQ_FLOOR_DB if v is None else v for v in r.rsrq]
    return out


def raw_feature_row(rsrp: Sequence[Optional[float]], rsrq: Sequence[Optional[float]]) -> np.ndarray:
    return np.array([RSRP_FLOOR_DBM if v is None else v for v in rsrp]
                    + [RSRQ_FLOOR_DB if v is None else v for v in rsrq], dtype=float)


def labels_of(records: Sequence[MeasurementRecord]) -> np.ndarray:
    return np.array([int(r.label) for r in records], dtype=np.int64)


@dataclass(frozen=True)
class StandardizationStats:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        if self.mean.shape != self.std.shape or np.any(self.std < 0):
            raise ContractError("stats need matching shapes and std >= 0")

    @property
    def dim(self) -> int:
        return self.mean.size

    @classmethod
    def fit(cls, raw: np.ndarray) -> "StandardizationStats":
        raw = np.asarray(raw, dtype=float)
        mean = raw.mean(axis=0)
        std = raw.std(axis=0, ddof=1) if raw.shape[0] > 1 else np.zeros(raw.shape[1])
        # constant columns can leave rounding residue instead of an exact zero
        const = np.all(raw == raw[:1], axis=0)
        std = np.where(const, 0.0, std)
        return cls(mean=mean, std=std)

    def transform(self, raw: np.ndarray) -> np.ndarray:
        raw = np.asarray(raw, dtype=float)
        if raw.shape[-1] != self.dim:
            raise ContractError(f"feature dimension {raw.shape[-1]} != stats dimension {self.dim}")
        safe = np.where(self.std > 0, self.std, 1.0)
        return np.where(self.std > 0, (raw - self.mean) / safe, 0.0)

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "StandardizationStats":
        return cls(mean=np.asarray(d["mean"], dtype=float), std=np.asarray(d["std"], dtype=float))


def featurize(record: MeasurementRecord, stats: StandardizationStats) -> np.ndarray:
    return stats.transform(raw_features([record])[0])


# --- partitioning ------------------------------------------------------------

def train_size(n: int, ratio: float = 0.75) -> int:
    return round_half_up(ratio * n)


def split_indices(n: int, ratio: float, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    perm = rng.permutation(n)
    k = train_size(n, ratio)
    return np.sort(perm[:k]), np.sort(perm[k:])


def split(group: Sequence[MeasurementRecord], ratio: float = 0.75, seed: int = 0):
    """Random train/test partition of one group; ``round_half_up(ratio*n)`` go to train."""
    if not group:
        raise ContractError("cannot split an empty group")
    rng = group_rng(seed, group[0].group_key, STREAM_SPLIT)
    tr, te = split_indices(len(group), ratio, rng)
    return [group[i] for i in tr], [group[i] for i in te]


def sample_indices(n: int, fraction: float, rng: np.random.Generator) -> np.ndarray:
    if fraction >= 1.0:
        return np.arange(n)
    k = max(1, round_half_up(fraction * n)) if n else 0
    return np.sort(rng.choice(n, size=k, replace=False))


def sample_fraction(dataset: GroupedDataset, fraction: float, seed: int) -> GroupedDataset:
    """Uniform per-group subsample, every group keeps at least one record."""
    if not 0.0 < fraction <= 1.0:
        raise ContractError("sample fraction must lie in (0, 1]")
    groups = {}
    for key, recs in dataset.groups.items():
        idx = sample_indices(len(recs), fraction, group_rng(seed, key, STREAM_SAMPLE))
        groups[key] = [recs[i] for i in idx]
    return GroupedDataset(groups, dataset.m)


@dataclass(frozen=True)
class DroppedGroup:
    key: GroupKey
    n_records: int
    reason: str


def filter_small_groups(dataset: GroupedDataset, ratio: float = 0.75):
    """Drop groups too small to fit or containing only one class.

    A group is too small when its training partition would hold fewer
    records than there are features.
    """
    kept, dropped = {}, []
    for key, recs in dataset.groups.items():
        n_train = train_size(len(recs), ratio)
        if n_train < dataset.feature_dim:
            dropped.append(DroppedGroup(key, len(recs),
                                        f"training size {n_train} < feature_dim {dataset.feature_dim}"))
            continue
        if len(set(labels_of(recs).tolist())) < 2:
            dropped.append(DroppedGroup(key, len(recs), "single class"))
            continue
        kept[key] = recs
    return GroupedDataset(kept, dataset.m), dropped


# --- oversampling ------------------------------------------------------------

def oversample_indices(labels, rng: np.random.Generator) -> np.ndarray:
    """Indices of the originals followed by minority draws with replacement.

    The minority class is topped up until both classes have equal counts.
    """
    labels = np.asarray(labels)
    c1 = np.flatnonzero(labels == ClassLabel.CLASS1)
    c2 = np.flatnonzero(labels == ClassLabel.CLASS2)
    if c1.size == 0 or c2.size == 0:
        raise ContractError("oversampling needs both classes present")
    minority, deficit = (c1, c2.size - c1.size) if c1.size < c2.size else (c2, c1.size - c2.size)
    extra = rng.choice(minority, size=deficit, replace=True) if deficit else np.empty(0, dtype=np.int64)
    return np.concatenate([np.arange(labels.size), extra]).astype(np.int64)


def oversample(train: Sequence[MeasurementRecord], seed: int = 0) -> List[MeasurementRecord]:
    if not train:
        raise ContractError("cannot oversample an empty group")
    rng = group_rng(seed, train[0].group_key, STREAM_OVERSAMPLE)
    idx = oversample_indices(labels_of(train), rng)
    return [train[i] for i in idx]
