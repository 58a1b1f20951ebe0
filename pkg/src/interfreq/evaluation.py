"""Per-group fitting and evaluation, aggregate tables and sweep products.

Pipeline for every (cell, alternative frequency) group:

    sample -> filter small / single-class groups -> 75/25 split
    -> standardize with training statistics -> optional oversampling
    -> fit each model -> probabilities on the test partition

Test probabilities feed both the plain 0.5-cut metrics and the duo-threshold
sweep. All randomness derives from (seed, group key, purpose), so results do
not depend on group order or on the number of worker threads.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import platform
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import __version__
from .core import (
    ConfigError,
    ConfusionCounts,
    ContractError,
    GroupKey,
    MeasurementRecord,
    accuracy,
    confusion,
    tnr,
    tpr,
)
from .datagen import ScenarioConfig, generate
from .duothreshold import (
    BestThresholdReport,
    SweepCell,
    mean_cells,
    pooled_cells,
    select_best,
    sweep,
    write_sweep_csv,
)
from .ingest import (
    STREAM_MODEL,
    STREAM_OVERSAMPLE,
    STREAM_SPLIT,
    DroppedGroup,
    GroupedDataset,
    StandardizationStats,
    filter_small_groups,
    group_rng,
    labels_of,
    load_csv,
    oversample_indices,
    raw_features,
    sample_fraction,
    split_indices,
)
from .models import MODEL_NAMES, DivergenceError, fit_model, hyper_to_dict, make_hyper

log = logging.getLogger(__name__)

VARIANTS = ("plain", "oversampled")
AGGREGATION_MODES = ("pooled", "per-group-mean")
TABLE_COLUMNS = ("model", "accuracy", "tpr", "tnr", "accuracy_pooled", "tpr_pooled", "tnr_pooled",
                 "accuracy_sd", "tpr_sd", "tnr_sd", "n_groups", "n_degenerate")


class EmptyExperimentError(RuntimeError):
    """No group survived filtering, so there is nothing to fit."""


@dataclass(frozen=True)
class ExperimentConfig:
    """Settings of one experiment run.

    Exactly one of ``scenario`` (synthetic generator settings) and ``data``
    (path to a dataset CSV) is given. Both the plain and the oversampled
    variant are always fitted for the accuracy tables; ``oversample`` picks
    which variant feeds the duo-threshold sweep.
    """

    scenario: Optional[dict] = None
    data: Optional[str] = None
    models: Tuple[str, ...] = MODEL_NAMES
    oversample: bool = True
    split_ratio: float = 0.75
    seed: int = 0
    grid_step: float = 0.05
    tpr_min: float = 0.90
    tnr_min: float = 0.95
    sample_fraction: float = 1.0
    aggregation: str = "pooled"
    forest: dict = field(default_factory=dict)
    logistic: dict = field(default_factory=dict)
    mlp: dict = field(default_factory=dict)
    threads: int = 1

    def __post_init__(self):
        object.__setattr__(self, "models", tuple(self.models))
        if (self.scenario is None) == (self.data is None):
            raise ConfigError("give exactly one of 'scenario' and 'data'")
        if not self.models:
            raise ConfigError("at least one model is required")
        for m in self.models:
            if m not in MODEL_NAMES:
                raise ConfigError(f"unknown model {m!r}; expected one of {MODEL_NAMES}")
        for name in ("split_ratio", "sample_fraction"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ConfigError(f"{name} must lie in (0, 1], got {v}")
        if self.aggregation not in AGGREGATION_MODES:
            raise ConfigError(f"aggregation must be one of {AGGREGATION_MODES}")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        for name in ("tpr_min", "tnr_min"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")

    def hyper(self, model: str):
        overrides = {"rf": self.forest, "lm": self.logistic, "nn": self.mlp}[model]
        return make_hyper(model, overrides)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["models"] = list(self.models)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown experiment fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        path = Path(path)
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
        # relative data paths are resolved against the config file
        if d.get("data") is not None and not Path(d["data"]).is_absolute():
            d["data"] = str(path.parent / d["data"])
        return cls.from_dict(d)


# --- per-group preparation -----------------------------------------------------

@dataclass
class GroupData:
    key: GroupKey
    stats: StandardizationStats
    X_train: np.ndarray
    y_train: np.ndarray
    X_test: np.ndarray
    y_test: np.ndarray

    def training_set(self, oversampled: bool, seed: int) -> Tuple[np.ndarray, np.ndarray]:
        if not oversampled:
            return self.X_train, self.y_train
        idx = oversample_indices(self.y_train, group_rng(seed, self.key, STREAM_OVERSAMPLE))
        return self.X_train[idx], self.y_train[idx]


def prepare_group(records: Sequence[MeasurementRecord], ratio: float, seed: int) -> GroupData:
    key = records[0].group_key
    tr, te = split_indices(len(records), ratio, group_rng(seed, key, STREAM_SPLIT))
    raw = raw_features(records)
    y = labels_of(records)
    stats = StandardizationStats.fit(raw[tr])
    return GroupData(key, stats, stats.transform(raw[tr]), y[tr], stats.transform(raw[te]), y[te])


def model_seed(seed: int, key: GroupKey) -> int:
    return int(group_rng(seed, key, STREAM_MODEL).integers(0, 2 ** 63))


def predicted_labels(probs: np.ndarray) -> np.ndarray:
    """Plain two-class cut: Class2 only when p > 0.5 (same as delta1 = delta2 = 0.5)."""
    return np.where(np.asarray(probs) > 0.5, 2, 1)


# --- aggregation ---------------------------------------------------------------

@dataclass(frozen=True)
class GroupScore:
    key: GroupKey
    counts: ConfusionCounts


@dataclass(frozen=True)
class ModelReportRow:
    model: str
    accuracy: float
    tpr: float
    tnr: float
    accuracy_pooled: float
    tpr_pooled: float
    tnr_pooled: float
    accuracy_sd: float
    tpr_sd: float
    tnr_sd: float
    n_groups: int
    n_degenerate: int

    def rates(self, mode: str) -> Tuple[float, float, float]:
        if mode == "pooled":
            return self.accuracy_pooled, self.tpr_pooled, self.tnr_pooled
        return self.accuracy, self.tpr, self.tnr


def aggregate(model: str, scores: Sequence[GroupScore]) -> ModelReportRow:
    """Unweighted mean of group rates alongside rates of the summed counts."""
    if not scores:
        raise ContractError("aggregate needs at least one group")
    acc = np.array([accuracy(s.counts) for s in scores])
    tp = np.array([tpr(s.counts) for s in scores])
    tn = np.array([tnr(s.counts) for s in scores])
    total = scores[0].counts
    for s in scores[1:]:
        total = total + s.counts
    degenerate = sum(1 for s in scores if s.counts.tpr_degenerate or s.counts.tnr_degenerate)
    return ModelReportRow(
        model=model,
        accuracy=float(acc.mean()), tpr=float(tp.mean()), tnr=float(tn.mean()),
        accuracy_pooled=accuracy(total), tpr_pooled=tpr(total), tnr_pooled=tnr(total),
        accuracy_sd=float(acc.std()), tpr_sd=float(tp.std()), tnr_sd=float(tn.std()),
        n_groups=len(scores), n_degenerate=degenerate,
    )


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, float) else str(v)


def table_csv(rows: Sequence[ModelReportRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TABLE_COLUMNS)
    for r in rows:
        d = asdict(r)
        w.writerow([_fmt(d[c]) for c in TABLE_COLUMNS])
    return buf.getvalue()


# --- sweep products ------------------------------------------------------------

def _cell_map(cells: Sequence[SweepCell]) -> Dict[Tuple[float, float], SweepCell]:
    return {(c.thresholds.delta1, c.thresholds.delta2): c for c in cells}


def emit_curves(cells: Sequence[SweepCell]) -> str:
    """TPR_d against delta1 and TNR_d against delta2 on the sweep lattice.

    TPR_d depends on delta1 only and TNR_d on delta2 only, so the curves are
    read off the (delta, 1) and (0, delta) cells.
    """
    cmap = _cell_map(cells)
    deltas = sorted({c.thresholds.delta1 for c in cells})
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("delta", "tpr_d", "tnr_d"))
    for d in deltas:
        w.writerow((_fmt(d), _fmt(cmap[(d, 1.0)].tpr_d), _fmt(cmap[(0.0, d)].tnr_d)))
    return buf.getvalue()


def emit_heatmap(cells: Sequence[SweepCell]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("delta1", "delta2", "measure_share"))
    for c in cells:
        w.writerow((_fmt(c.thresholds.delta1), _fmt(c.thresholds.delta2), _fmt(c.measure_share)))
    return buf.getvalue()


def emit_heatmap_diff(cells_a: Sequence[SweepCell], cells_b: Sequence[SweepCell]) -> str:
    """Measure share of A minus that of B on each lattice cell."""
    if [c.thresholds for c in cells_a] != [c.thresholds for c in cells_b]:
        raise ContractError("sweeps do not share a lattice")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("delta1", "delta2", "measure_share_a", "measure_share_b", "measure_share_diff"))
    for a, b in zip(cells_a, cells_b):
        w.writerow((_fmt(a.thresholds.delta1), _fmt(a.thresholds.delta2), _fmt(a.measure_share),
                    _fmt(b.measure_share), _fmt(a.measure_share - b.measure_share)))
    return buf.getvalue()


# --- experiment ----------------------------------------------------------------

@dataclass
class ModelRun:
    """Outcome of one model/variant across all groups."""

    model: str
    variant: str
    scores: List[GroupScore] = field(default_factory=list)
    group_sweeps: List[List[SweepCell]] = field(default_factory=list)
    # (group key, test probabilities, test labels) for every fitted group
    predictions: List[Tuple[GroupKey, np.ndarray, np.ndarray]] = field(default_factory=list)
    failures: List[Tuple[GroupKey, str]] = field(default_factory=list)


@dataclass
class Report:
    config: ExperimentConfig
    n_groups_total: int
    dropped: List[DroppedGroup]
    runs: Dict[Tuple[str, str], ModelRun]
    tables: Dict[str, List[ModelReportRow]]
    sweeps: Dict[str, Dict[str, List[SweepCell]]]  # model -> mode -> cells
    best: Dict[str, Dict[str, BestThresholdReport]]

    @property
    def sweep_variant(self) -> str:
        return "oversampled" if self.config.oversample else "plain"

    def accounting(self, model: str, variant: str) -> dict:
        run = self.runs[(model, variant)]
        return {"total": self.n_groups_total, "filtered": len(self.dropped),
                "fitted": len(run.scores), "failed": len(run.failures)}


def load_dataset(config: ExperimentConfig) -> GroupedDataset:
    if config.scenario is not None:
        return generate(ScenarioConfig.from_dict(config.scenario))
    return load_csv(config.data)


def _run_group(config: ExperimentConfig, records: Sequence[MeasurementRecord]):
    key = records[0].group_key
    gd = prepare_group(records, config.split_ratio, config.seed)
    seed = model_seed(config.seed, key)
    out = {}
    for variant in VARIANTS:
        oversampled = variant == "oversampled"
        if len(set(gd.y_train.tolist())) < 2:
            for m in config.models:
                out[(m, variant)] = (None, "single class in training partition")
            continue
        X, y = gd.training_set(oversampled, config.seed)
        for m in config.models:
            try:
                model = fit_model(m, X, y, seed, config.hyper(m))
                probs = model.predict_proba(gd.X_test)
            except (DivergenceError, ContractError) as exc:
                log.warning("group %s model %s (%s) failed: %s", key, m, variant, exc)
                out[(m, variant)] = (None, str(exc))
                continue
            out[(m, variant)] = (probs, None)
    return key, gd.y_test, out


def run_experiment(config: ExperimentConfig, dataset: Optional[GroupedDataset] = None) -> Report:
    ds = dataset if dataset is not None else load_dataset(config)
    n_total = len(ds.groups)
    if config.sample_fraction < 1.0:
        ds = sample_fraction(ds, config.sample_fraction, config.seed)
    kept, dropped = filter_small_groups(ds, config.split_ratio)
    if not kept.groups:
        raise EmptyExperimentError(
            f"no usable groups: {n_total} total, {len(dropped)} filtered out")
    log.info("fitting %d groups (%d filtered)", len(kept.groups), len(dropped))

    work = list(kept.groups.values())
    if config.threads > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            results = list(pool.map(lambda r: _run_group(config, r), work))
    else:
        results = [_run_group(config, r) for r in work]

    runs = {(m, v): ModelRun(m, v) for m in config.models for v in VARIANTS}
    for key, y_test, out in results:  # already in sorted group order
        for (m, v), (probs, err) in out.items():
            run = runs[(m, v)]
            if probs is None:
                run.failures.append((key, err))
                continue
            run.scores.append(GroupScore(key, confusion(predicted_labels(probs), y_test)))
            run.predictions.append((key, probs, y_test))
            if v == ("oversampled" if config.oversample else "plain"):
                run.group_sweeps.append(sweep(probs, y_test, config.grid_step))

    tables: Dict[str, List[ModelReportRow]] = {}
    for v in VARIANTS:
        tables[v] = [aggregate(m, runs[(m, v)].scores) for m in config.models if runs[(m, v)].scores]

    sweep_variant = "oversampled" if config.oversample else "plain"
    sweeps, best = {}, {}
    for m in config.models:
        gs = runs[(m, sweep_variant)].group_sweeps
        if not gs:
            continue
        sweeps[m] = {"pooled": pooled_cells(gs), "per-group-mean": mean_cells(gs)}
        best[m] = {mode: select_best(cells, config.tpr_min, config.tnr_min)
                   for mode, cells in sweeps[m].items()}
    return Report(config, n_total, dropped, runs, tables, sweeps, best)


def manifest(report: Report) -> dict:
    cfg = report.config
    return {
        "package": "interfreq",
        "version": __version__,
        "numpy": np.__version__,
        "python": platform.python_version(),
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "resolved_hyperparameters": {m: hyper_to_dict(cfg.hyper(m)) for m in cfg.models},
        "sweep_variant": report.sweep_variant,
        "groups": {f"{m}/{v}": report.accounting(m, v) for (m, v) in report.runs},
        "dropped": [{"cell_id": d.key[0], "alt_freq_id": d.key[1], "n_records": d.n_records,
                     "reason": d.reason} for d in report.dropped],
        "failures": {f"{m}/{v}": [{"cell_id": k[0], "alt_freq_id": k[1], "reason": r} for k, r in run.failures]
                     for (m, v), run in report.runs.items() if run.failures},
    }


def best_thresholds_doc(report: Report) -> dict:
    doc = {}
    for m, by_mode in report.best.items():
        doc[m] = {"variant": report.sweep_variant, "primary": report.config.aggregation}
        doc[m].update({mode: rep.to_dict() for mode, rep in by_mode.items()})
    return doc


def _write_text(path: Path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _write_json(path: Path, doc) -> None:
    _write_text(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


def write_report(report: Report, out_dir) -> List[Path]:
    """Write every data product under ``out_dir``; returns the paths written."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    def emit(name: str, text: str):
        p = out / name
        _write_text(p, text)
        written.append(p)

    emit("table_accuracies.csv", table_csv(report.tables["plain"]))
    emit("table_accuracies_oversampled.csv", table_csv(report.tables["oversampled"]))
    for m, by_mode in report.sweeps.items():
        p = out / f"sweep_{m}.csv"
        write_sweep_csv(p, by_mode["pooled"])
        written.append(p)
        p = out / f"sweep_{m}_per_group_mean.csv"
        write_sweep_csv(p, by_mode["per-group-mean"])
        written.append(p)
        emit(f"curves_{m}.csv", emit_curves(by_mode["pooled"]))
    names = list(report.sweeps)
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            emit(f"heatmap_diff_{a}_{b}.csv", emit_heatmap_diff(report.sweeps[a]["pooled"], report.sweeps[b]["pooled"]))
    p = out / "best_thresholds.json"
    _write_json(p, best_thresholds_doc(report))
    written.append(p)
    p = out / "run_manifest.json"
    _write_json(p, manifest(report))
    written.append(p)
    return written


def primary_best(report: Report, model: str) -> BestThresholdReport:
    return report.best[model][report.config.aggregation]
