"""Command line entry point.

Exit codes: 0 success, 1 infeasible result (no threshold pair meets the
limits), 2 usage or data error. Machine-readable results go to stdout,
logs to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import __version__
from .core import ConfigError, ContractError, InvalidMeasurementError
from .datagen import ScenarioConfig, simulate
from .duothreshold import ThresholdPair, decide, pooled_cells, mean_cells, select_best, sweep, write_sweep_csv
from .evaluation import (
    EmptyExperimentError,
    ExperimentConfig,
    model_seed,
    primary_best,
    run_experiment,
    write_report,
)
from .ingest import (
    STREAM_OVERSAMPLE,
    STREAM_SPLIT,
    SchemaError,
    StandardizationStats,
    filter_small_groups,
    group_rng,
    labels_of,
    load_csv,
    oversample_indices,
    raw_feature_row,
    raw_features,
    sample_fraction,
    split_indices,
    write_csv,
)
from .models import MODEL_NAMES, fit_model, hyper_to_dict, make_hyper, model_from_dict

log = logging.getLogger("interfreq")

MODEL_FORMAT = "interfreq-model"
MODEL_FORMAT_VERSION = 1
EXIT_OK, EXIT_INFEASIBLE, EXIT_ERROR = 0, 1, 2


class UsageError(Exception):
    pass


DATA_ERRORS = (ConfigError, ContractError, InvalidMeasurementError, SchemaError, EmptyExperimentError,
               UsageError, OSError, json.JSONDecodeError, KeyError)


def _key_str(key) -> str:
    return f"{key[0]}:{key[1]}"


def _parse_key(text: str):
    if ":" not in text:
        raise UsageError(f"group must look like CELL:FREQ, got {text!r}")
    cell, freq = text.split(":", 1)
    return cell, freq


def _write_json(path, doc) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


# --- generate ------------------------------------------------------------------

def cmd_generate(args) -> int:
    cfg = ScenarioConfig.from_json(args.config)
    if args.seed is not None:
        cfg = ScenarioConfig.from_dict({**cfg.to_dict(), "seed": args.seed})
    gen = simulate(cfg)
    debug = [g.debug_columns() for g in gen] if args.debug_columns else None
    write_csv(args.out, [g.record for g in gen], cfg.n_cells, debug_rows=debug)
    log.info("wrote %d records to %s", len(gen), args.out)
    return EXIT_OK


# --- preprocess ----------------------------------------------------------------

def cmd_preprocess(args) -> int:
    seed = 0 if args.seed is None else args.seed
    ds = load_csv(args.data)
    if args.sample_fraction < 1.0:
        ds = sample_fraction(ds, args.sample_fraction, seed)
    kept, dropped = filter_small_groups(ds, args.split)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train, test, stats = [], [], {}
    for key, recs in kept.groups.items():
        tr, te = split_indices(len(recs), args.split, group_rng(seed, key, STREAM_SPLIT))
        stats[_key_str(key)] = StandardizationStats.fit(raw_features([recs[i] for i in tr])).to_dict()
        tr_recs = [recs[i] for i in tr]
        if args.oversample and len(set(labels_of(tr_recs).tolist())) == 2:
            idx = oversample_indices(labels_of(tr_recs), group_rng(seed, key, STREAM_OVERSAMPLE))
            tr_recs = [tr_recs[i] for i in idx]
        train += tr_recs
        test += [recs[i] for i in te]
    write_csv(out / "train.csv", train, ds.m)
    write_csv(out / "test.csv", test, ds.m)
    _write_json(out / "stats.json", stats)
    _write_json(out / "preprocess.json", {
        "seed": seed, "split": args.split, "oversample": args.oversample,
        "sample_fraction": args.sample_fraction, "source": str(args.data),
        "dropped": [{"group": _key_str(d.key), "n_records": d.n_records, "reason": d.reason} for d in dropped],
    })
    log.info("kept %d groups, dropped %d", len(kept.groups), len(dropped))
    return EXIT_OK


# --- train ---------------------------------------------------------------------

def _load_preprocessed(data_dir):
    d = Path(data_dir)
    stats = {k: StandardizationStats.from_dict(v) for k, v in _read_json(d / "stats.json").items()}
    return d, stats


def cmd_train(args) -> int:
    seed = 0 if args.seed is None else args.seed
    d, stats = _load_preprocessed(args.data)
    train = load_csv(d / "train.csv")
    overrides = json.loads(args.params) if args.params else {}
    if args.n_trees is not None:
        overrides["n_trees"] = args.n_trees
    hyper = make_hyper(args.model, overrides)
    groups = []
    for key, recs in train.groups.items():
        st = stats[_key_str(key)]
        X, y = st.transform(raw_features(recs)), labels_of(recs)
        if len(set(y.tolist())) < 2:
            log.warning("group %s has a single class, skipped", _key_str(key))
            continue
        if args.oversample:
            idx = oversample_indices(y, group_rng(seed, key, STREAM_OVERSAMPLE))
            X, y = X[idx], y[idx]
        model = fit_model(args.model, X, y, model_seed(seed, key), hyper, n_jobs=args.threads)
        groups.append({"cell_id": key[0], "alt_freq_id": key[1], "n_train": int(y.size),
                       "stats": st.to_dict(), "params": model.to_dict()})
    if not groups:
        raise EmptyExperimentError("no trainable groups in the training data")
    _write_json(args.out, {
        "format": MODEL_FORMAT, "version": MODEL_FORMAT_VERSION, "model": args.model,
        "m": train.m, "seed": seed, "oversample": args.oversample,
        "hyperparameters": hyper_to_dict(hyper), "data": str(args.data), "groups": groups,
    })
    log.info("trained %s on %d groups", args.model, len(groups))
    return EXIT_OK


class ModelDocument:
    """A loaded model file: one fitted model plus standardization per group."""

    def __init__(self, doc: dict):
        if doc.get("format") != MODEL_FORMAT or doc.get("version") != MODEL_FORMAT_VERSION:
            raise SchemaError("not an interfreq model document (format/version mismatch)")
        self.name = doc["model"]
        if self.name not in MODEL_NAMES:
            raise SchemaError(f"unknown model {self.name!r}")
        self.m = int(doc["m"])
        self.groups = {}
        for g in doc["groups"]:
            key = (g["cell_id"], g["alt_freq_id"])
            self.groups[key] = (StandardizationStats.from_dict(g["stats"]), model_from_dict(self.name, g["params"]))

    @classmethod
    def load(cls, path) -> "ModelDocument":
        try:
            return cls(_read_json(path))
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"malformed model file {path}: {exc}") from None

    def predict(self, key, raw: np.ndarray) -> np.ndarray:
        if key not in self.groups:
            raise UsageError(f"model has no group {_key_str(key)}")
        stats, model = self.groups[key]
        return model.predict_proba(stats.transform(raw))


# --- sweep ---------------------------------------------------------------------

def cmd_sweep(args) -> int:
    model = ModelDocument.load(args.model)
    data = Path(args.data)
    test = load_csv(data / "test.csv" if data.is_dir() else data)
    per_group = []
    for key, recs in test.groups.items():
        if key not in model.groups:
            log.warning("no model for group %s, skipped", _key_str(key))
            continue
        probs = model.predict(key, raw_features(recs))
        per_group.append(sweep(probs, labels_of(recs), args.grid_step))
    if not per_group:
        raise EmptyExperimentError("no test group matches a model group")
    cells = pooled_cells(per_group) if args.aggregation == "pooled" else mean_cells(per_group)
    write_sweep_csv(args.out, cells)
    best = select_best(cells, args.tpr_min, args.tnr_min)
    doc = {"model": model.name, "aggregation": args.aggregation, **best.to_dict()}
    if args.best:
        _write_json(args.best, doc)
    print(json.dumps(doc, sort_keys=True))
    return EXIT_OK if best.feasible else EXIT_INFEASIBLE


# --- experiment ----------------------------------------------------------------

def cmd_experiment(args) -> int:
    cfg = ExperimentConfig.from_json(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.threads is not None and args.threads != 1:
        overrides["threads"] = args.threads
    if overrides:
        cfg = ExperimentConfig.from_dict({**cfg.to_dict(), **overrides})
    report = run_experiment(cfg)
    paths = write_report(report, args.out)
    summary = {m: primary_best(report, m).to_dict() for m in report.best}
    print(json.dumps({"out": str(args.out), "files": sorted(p.name for p in paths), "best": summary},
                     sort_keys=True))
    return EXIT_OK


# --- recommend -----------------------------------------------------------------

def _parse_values(text: str) -> List[Optional[float]]:
    out = []
    for tok in text.split(","):
        tok = tok.strip()
        try:
            out.append(None if tok in ("", "NA", "nan") else float(tok))
        except ValueError:
            raise UsageError(f"cannot parse value {tok!r}") from None
    return out


def recommend(model: ModelDocument, key, rsrp, rsrq, thresholds: ThresholdPair) -> dict:
    """Decision and probability for one raw measurement row."""
    if len(rsrp) != model.m or len(rsrq) != model.m:
        raise UsageError(f"expected {model.m} rsrp and rsrq values, got {len(rsrp)} and {len(rsrq)}")
    p = float(model.predict(key, raw_feature_row(rsrp, rsrq)[None, :])[0])
    return {"decision": decide(p, thresholds).action, "probability": p,
            "group": _key_str(key), "delta1": thresholds.delta1, "delta2": thresholds.delta2}


def cmd_recommend(args) -> int:
    model = ModelDocument.load(args.model)
    if args.group is not None:
        key = _parse_key(args.group)
    elif len(model.groups) == 1:
        key = next(iter(model.groups))
    else:
        raise UsageError("model covers several groups; pass --group CELL:FREQ")
    result = recommend(model, key, _parse_values(args.rsrp), _parse_values(args.rsrq),
                       ThresholdPair(args.delta1, args.delta2))
    print(json.dumps(result, sort_keys=True))
    return EXIT_OK


# --- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="random seed (default 0)")
    common.add_argument("--threads", type=int, default=1, help="worker threads; results do not depend on it")
    common.add_argument("--quiet", action="store_true", help="only log errors")

    p = argparse.ArgumentParser(prog="interfreq", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", metavar="COMMAND")

    g = sub.add_parser("generate", parents=[common], help="write a synthetic dataset CSV")
    g.add_argument("--config", required=True, help="scenario JSON")
    g.add_argument("--out", required=True)
    g.add_argument("--debug-columns", action="store_true", help="append linear RSRP/RSSI columns")
    g.set_defaults(func=cmd_generate)

    pp = sub.add_parser("preprocess", parents=[common], help="filter, split and optionally oversample")
    pp.add_argument("--data", required=True)
    pp.add_argument("--split", type=float, default=0.75)
    pp.add_argument("--oversample", action="store_true")
    pp.add_argument("--sample-fraction", type=float, default=1.0)
    pp.add_argument("--out", required=True)
    pp.set_defaults(func=cmd_preprocess)

    t = sub.add_parser("train", parents=[common], help="fit one model per group")
    t.add_argument("--data", required=True, help="directory written by preprocess")
    t.add_argument("--model", required=True, choices=MODEL_NAMES)
    t.add_argument("--oversample", action="store_true")
    t.add_argument("--n-trees", type=int, default=None)
    t.add_argument("--params", default=None, help="JSON object of hyperparameter overrides")
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sweep", parents=[common], help="duo-threshold sweep and best pair")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True, help="preprocess directory or dataset CSV")
    s.add_argument("--grid-step", type=float, default=0.05)
    s.add_argument("--tpr-min", type=float, default=0.90)
    s.add_argument("--tnr-min", type=float, default=0.95)
    s.add_argument("--aggregation", choices=("pooled", "per-group-mean"), default="pooled")
    s.add_argument("--out", required=True)
    s.add_argument("--best", default=None)
    s.set_defaults(func=cmd_sweep)

    e = sub.add_parser("experiment", parents=[common], help="full per-group evaluation")
    e.add_argument("--config", required=True)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_experiment)

    r = sub.add_parser("recommend", parents=[common], help="stay/handover/measure for one row")
    r.add_argument("--model", required=True)
    r.add_argument("--group", default=None, help="CELL:FREQ")
    r.add_argument("--rsrp", required=True, help="comma-separated dBm values, empty for missing")
    r.add_argument("--rsrq", required=True, help="comma-separated dB values, empty for missing")
    r.add_argument("--delta1", type=float, required=True)
    r.add_argument("--delta2", type=float, required=True)
    r.set_defaults(func=cmd_recommend)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv:
        parser.print_usage(sys.stderr)
        return EXIT_ERROR
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_ERROR
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_ERROR
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
