"""Three-way stay/handover/measure decisions from a class-2 probability.

A probability at or below ``delta1`` means stay, at or above ``delta2``
means hand over, anything in between is sent for a real measurement.
Measured observations count as correctly handled, so the adjusted rates

    tpr_d = (TP + N_mp) / (TP + FN + N_mp)
    tnr_d = (TN + N_mn) / (TN + FP + N_mn)

reach 1 when everything is measured. The measure share
``(N_mn + N_mp) / N`` is the cost to minimize subject to lower limits on
both rates.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .core import (
    ClassLabel,
    ConfigError,
    ContractError,
    DuoConfusion,
    as_label_array,
    measure_share,
    tnr_d,
    tpr_d,
)

SWEEP_COLUMNS = ("delta1", "delta2", "tpr_d", "tnr_d", "measure_share",
                 "tp", "tn", "fp", "fn", "n_mp", "n_mn")


class Decision(enum.IntEnum):
    STAY = 1
    HANDOVER = 2
    MEASURE = 3

    @property
    def action(self) -> str:
        return self.name.lower()


@dataclass(frozen=True)
class ThresholdPair:
    delta1: float
    delta2: float

    def __post_init__(self):
        if not 0.0 <= self.delta1 <= self.delta2 <= 1.0:
            raise ContractError(f"need 0 <= delta1 <= delta2 <= 1, got ({self.delta1}, {self.delta2})")


def decide(p: float, t: ThresholdPair) -> Decision:
    """Rules are tried in order, so ``p == delta1 == delta2`` means stay."""
    if not 0.0 <= p <= 1.0:
        raise ContractError(f"probability {p} outside [0, 1]")
    if p <= t.delta1:
        return Decision.STAY
    if p >= t.delta2:
        return Decision.HANDOVER
    return Decision.MEASURE


def decide_many(probs, t: ThresholdPair) -> np.ndarray:
    p = np.asarray(probs, dtype=float)
    if p.size and (np.any(p < 0.0) or np.any(p > 1.0) or np.any(np.isnan(p))):
        raise ContractError("probabilities must lie in [0, 1]")
    return np.where(p <= t.delta1, Decision.STAY,
                    np.where(p >= t.delta2, Decision.HANDOVER, Decision.MEASURE)).astype(np.int64)


def _check_inputs(probs, labels) -> Tuple[np.ndarray, np.ndarray]:
    p = np.asarray(probs, dtype=float).ravel()
    y = as_label_array(labels)
    if p.size != y.size:
        raise ContractError(f"length mismatch: {p.size} probabilities, {y.size} labels")
    if p.size == 0:
        raise ContractError("need at least one observation")
    return p, y


def duo_confusion(probs, labels, t: ThresholdPair) -> DuoConfusion:
    p, y = _check_inputs(probs, labels)
    d = decide_many(p, t)
    pos = y == ClassLabel.CLASS2
    return DuoConfusion(
        tp=int(np.sum(pos & (d == Decision.HANDOVER))),
        tn=int(np.sum(~pos & (d == Decision.STAY))),
        fp=int(np.sum(~pos & (d == Decision.HANDOVER))),
        fn=int(np.sum(pos & (d == Decision.STAY))),
        n_mn=int(np.sum(~pos & (d == Decision.MEASURE))),
        n_mp=int(np.sum(pos & (d == Decision.MEASURE))),
    )


@dataclass(frozen=True)
class SweepCell:
    thresholds: ThresholdPair
    tpr_d: float
    tnr_d: float
    measure_share: float
    duo: DuoConfusion

    @property
    def tpr_degenerate(self) -> bool:
        return self.duo.positives == 0

    @property
    def tnr_degenerate(self) -> bool:
        return self.duo.negatives == 0

    @classmethod
    def from_duo(cls, t: ThresholdPair, duo: DuoConfusion) -> "SweepCell":
        return cls(t, tpr_d(duo), tnr_d(duo), measure_share(duo), duo)

    def row(self) -> dict:
        d = self.duo
        return {"delta1": self.thresholds.delta1, "delta2": self.thresholds.delta2,
                "tpr_d": self.tpr_d, "tnr_d": self.tnr_d, "measure_share": self.measure_share,
                "tp": d.tp, "tn": d.tn, "fp": d.fp, "fn": d.fn, "n_mp": d.n_mp, "n_mn": d.n_mn}


def duo_metrics(probs, labels, t: ThresholdPair) -> SweepCell:
    return SweepCell.from_duo(t, duo_confusion(probs, labels, t))


def lattice(step: float) -> np.ndarray:
    """Points ``0, step, ..., 1``; ``step`` must divide 1 evenly."""
    if not 0.0 < step <= 1.0:
        raise ConfigError(f"grid step {step} must lie in (0, 1]")
    n = int(round(1.0 / step))
    if abs(n * step - 1.0) > 1e-9:
        raise ConfigError(f"grid step {step} does not divide 1 evenly")
    # i / n is exact where i * step accumulates rounding (0.05 * 13 != 0.65)
    return np.arange(n + 1) / n


def threshold_grid(step: float) -> List[ThresholdPair]:
    pts = lattice(step).tolist()
    return [ThresholdPair(a, b) for i, a in enumerate(pts) for b in pts[i:]]


def sweep(probs, labels, grid_step: float = 0.05) -> List[SweepCell]:
    """Duo metrics on every lattice pair with ``delta1 <= delta2``, ordered by (delta1, delta2)."""
    p, y = _check_inputs(probs, labels)
    return [duo_metrics(p, y, t) for t in threshold_grid(grid_step)]


def pooled_cells(per_group: Sequence[Sequence[SweepCell]]) -> List[SweepCell]:
    """Cell-wise sum of confusion counts across groups, rates recomputed."""
    _check_same_lattice(per_group)
    out = []
    for cells in zip(*per_group):
        duo = cells[0].duo
        for c in cells[1:]:
            duo = duo + c.duo
        out.append(SweepCell.from_duo(cells[0].thresholds, duo))
    return out


def mean_cells(per_group: Sequence[Sequence[SweepCell]]) -> List[SweepCell]:
    """Cell-wise unweighted mean of group rates; counts are summed for reference.

    Unlike pooled cells, ``measure_share`` here is the mean of group shares
    and need not equal the share implied by the summed counts.
    """
    _check_same_lattice(per_group)
    out = []
    for cells in zip(*per_group):
        duo = cells[0].duo
        for c in cells[1:]:
            duo = duo + c.duo
        out.append(SweepCell(cells[0].thresholds,
                             float(np.mean([c.tpr_d for c in cells])),
                             float(np.mean([c.tnr_d for c in cells])),
                             float(np.mean([c.measure_share for c in cells])),
                             duo))
    return out


def _check_same_lattice(per_group: Sequence[Sequence[SweepCell]]) -> None:
    if not per_group:
        raise ContractError("no groups to aggregate")
    ref = [c.thresholds for c in per_group[0]]
    for cells in per_group[1:]:
        if [c.thresholds for c in cells] != ref:
            raise ContractError("sweeps were computed on different lattices")


@dataclass(frozen=True)
class BestThresholdReport:
    tpr_min: float
    tnr_min: float
    cell: Optional[SweepCell]

    @property
    def feasible(self) -> bool:
        return self.cell is not None

    @property
    def thresholds(self) -> Optional[ThresholdPair]:
        return None if self.cell is None else self.cell.thresholds

    def to_dict(self) -> dict:
        d = {"feasible": self.feasible, "tpr_min": self.tpr_min, "tnr_min": self.tnr_min}
        if self.cell is not None:
            d.update(self.cell.row())
        return d


def select_best(cells: Sequence[SweepCell], tpr_min: float = 0.90, tnr_min: float = 0.95) -> BestThresholdReport:
    """Feasible cell with the lowest measure share.

    Equal shares prefer the larger delta1, then the smaller delta2.
    """
    if not cells:
        raise ContractError("select_best needs at least one cell")
    feasible = [c for c in cells if c.tpr_d >= tpr_min and c.tnr_d >= tnr_min]
    if not feasible:
        return BestThresholdReport(tpr_min, tnr_min, None)
    best = min(feasible, key=lambda c: (c.measure_share, -c.thresholds.delta1, c.thresholds.delta2))
    return BestThresholdReport(tpr_min, tnr_min, best)


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, float) else str(v)


def write_sweep_csv(path, cells: Iterable[SweepCell]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for c in cells:
            row = c.row()
            w.writerow([_fmt(row[k]) for k in SWEEP_COLUMNS])


def read_sweep_csv(path) -> List[SweepCell]:
    cells = []
    with open(path, encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            duo = DuoConfusion(*(int(row[k]) for k in ("tp", "tn", "fp", "fn", "n_mn", "n_mp")))
            cells.append(SweepCell(ThresholdPair(float(row["delta1"]), float(row["delta2"])),
                                   float(row["tpr_d"]), float(row["tnr_d"]), float(row["measure_share"]), duo))
    return cells
