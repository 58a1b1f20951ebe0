"""Shared domain types, class labeling and confusion-matrix rates.

Class2 ("the alternative frequency is strictly better than the serving
cell") is the positive class everywhere in the package.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

RSRP_RANGE_DBM = (-140.0, -40.0)
RSRQ_RANGE_DB = (-30.0, 0.0)


class ContractError(ValueError):
    """A caller violated an operation's preconditions."""


class InvalidMeasurementError(ValueError):
    """A measurement value is non-finite or outside its plausible range."""


class ConfigError(ValueError):
    """A configuration object violates its invariants."""


class ClassLabel(enum.IntEnum):
    CLASS1 = 1  # serving cell at least as good: stay
    CLASS2 = 2  # alternative frequency strictly better: positive


POSITIVE = ClassLabel.CLASS2
NEGATIVE = ClassLabel.CLASS1

GroupKey = Tuple[str, str]


@dataclass(frozen=True)
class MeasurementRecord:
    """One observation on the serving frequency plus the best alternative RSRQ.

    ``rsrp``/``rsrq`` hold one entry per cell (``None`` when the cell was not
    detected). ``serving_index`` is zero-based.
    """

    group_key: GroupKey
    serving_index: int
    rsrp: Tuple[Optional[float], ...]
    rsrq: Tuple[Optional[float], ...]
    y: float

    def __post_init__(self):
        m = len(self.rsrp)
        if len(self.rsrq) != m:
            raise InvalidMeasurementError(
                f"rsrp has {m} entries but rsrq has {len(self.rsrq)}")
        if not 0 <= self.serving_index < m:
            raise InvalidMeasurementError(
                f"serving_index {self.serving_index} out of range for m={m}")
        j = self.serving_index
        if self.rsrp[j] is None or self.rsrq[j] is None:
            raise InvalidMeasurementError("serving cell entries must be present")
        for name, values, (lo, hi) in (("rsrp", self.rsrp, RSRP_RANGE_DBM),
                                       ("rsrq", self.rsrq, RSRQ_RANGE_DB)):
            for i, v in enumerate(values):
                if v is None:
                    continue
                if not math.isfinite(v) or not lo <= v <= hi:
                    raise InvalidMeasurementError(
                        f"{name}_{i + 1}={v} outside [{lo}, {hi}]")
        if not math.isfinite(self.y):
            raise InvalidMeasurementError(f"y={self.y} is not finite")

    @property
    def m(self) -> int:
        return len(self.rsrp)

    @property
    def q_serving(self) -> float:
        return self.rsrq[self.serving_index]

    @property
    def label(self) -> ClassLabel:
        return label(self.y, self.q_serving)


def label(y: float, q_serving: float) -> ClassLabel:
    """Class1 when ``y <= q_serving`` (ties stay), otherwise Class2."""
    if not (math.isfinite(y) and math.isfinite(q_serving)):
        raise InvalidMeasurementError(f"non-finite RSRQ: y={y}, q={q_serving}")
    return ClassLabel.CLASS1 if y <= q_serving else ClassLabel.CLASS2


def as_label_array(labels) -> np.ndarray:
    arr = np.asarray(labels, dtype=np.int64).ravel()
    if arr.size and not np.isin(arr, (1, 2)).all():
        raise ContractError("labels must be 1 or 2")
    return arr


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.tn, self.fp, self.fn) < 0:
            raise ContractError("confusion counts must be nonnegative")

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    @property
    def tpr_degenerate(self) -> bool:
        return self.tp + self.fn == 0

    @property
    def tnr_degenerate(self) -> bool:
        return self.tn + self.fp == 0

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.tn + other.tn,
                               self.fp + other.fp, self.fn + other.fn)


@dataclass(frozen=True)
class DuoConfusion:
    """Confusion counts under the three-way rule.

    ``n_mn``/``n_mp`` count actual negatives/positives routed to "measure".
    """

    tp: int
    tn: int
    fp: int
    fn: int
    n_mn: int
    n_mp: int

    def __post_init__(self):
        if min(self.tp, self.tn, self.fp, self.fn, self.n_mn, self.n_mp) < 0:
            raise ContractError("duo confusion counts must be nonnegative")

    @property
    def positives(self) -> int:
        return self.tp + self.fn + self.n_mp

    @property
    def negatives(self) -> int:
        return self.tn + self.fp + self.n_mn

    @property
    def total(self) -> int:
        return self.positives + self.negatives

    def __add__(self, other: "DuoConfusion") -> "DuoConfusion":
        return DuoConfusion(self.tp + other.tp, self.tn + other.tn,
                            self.fp + other.fp, self.fn + other.fn,
                            self.n_mn + other.n_mn, self.n_mp + other.n_mp)


def confusion(predicted: Sequence[int], actual: Sequence[int]) -> ConfusionCounts:
    pred = as_label_array(predicted)
    act = as_label_array(actual)
    if pred.size != act.size:
        raise ContractError(f"length mismatch: {pred.size} vs {act.size}")
    if pred.size == 0:
        raise ContractError("cannot score an empty prediction set")
    pos_pred = pred == POSITIVE
    pos_act = act == POSITIVE
    return ConfusionCounts(
        tp=int(np.sum(pos_pred & pos_act)),
        tn=int(np.sum(~pos_pred & ~pos_act)),
        fp=int(np.sum(pos_pred & ~pos_act)),
        fn=int(np.sum(~pos_pred & pos_act)),
    )


def _ratio(num: int, den: int) -> float:
    # an empty class is vacuously handled perfectly; callers read the flag
    return 1.0 if den == 0 else num / den


def accuracy(c: ConfusionCounts) -> float:
    if c.total == 0:
        raise ContractError("accuracy of an empty confusion matrix")
    return (c.tp + c.tn) / c.total


def tpr(c: ConfusionCounts) -> float:
    return _ratio(c.tp, c.tp + c.fn)


def tnr(c: ConfusionCounts) -> float:
    return _ratio(c.tn, c.tn + c.fp)


def tpr_d(c: DuoConfusion) -> float:
    return _ratio(c.tp + c.n_mp, c.positives)


def tnr_d(c: DuoConfusion) -> float:
    return _ratio(c.tn + c.n_mn, c.negatives)


def measure_share(c: DuoConfusion) -> float:
    if c.total == 0:
        raise ContractError("measure share of an empty set")
    return (c.n_mn + c.n_mp) / c.total
