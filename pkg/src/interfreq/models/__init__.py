"""Probabilistic binary classifiers sharing one contract.

Every fitted model exposes ``predict_proba(X) -> p(Class2 | x)`` with values
in [0, 1]. Models are looked up by short name: ``rf``, ``lm``, ``nn``.
"""

from __future__ import annotations

from dataclasses import asdict, replace
from typing import Optional, Protocol

import numpy as np

from ..core import ConfigError
from .forest import Forest, ForestConfig, fit_forest
from .logistic import DivergenceError, LogisticHyper, LogisticModel, fit_logistic
from .mlp import MlpHyper, MlpModel, fit_mlp

MODEL_NAMES = ("rf", "lm", "nn")


class ProbabilisticClassifier(Protocol):
    def predict_proba(self, X) -> np.ndarray: ...


def default_hyper(name: str):
    if name == "rf":
        return ForestConfig()
    if name == "lm":
        return LogisticHyper()
    if name == "nn":
        return MlpHyper()
    raise ConfigError(f"unknown model {name!r}; expected one of {MODEL_NAMES}")


def make_hyper(name: str, overrides: Optional[dict] = None):
    hyper = default_hyper(name)
    if overrides:
        unknown = set(overrides) - set(asdict(hyper))
        if unknown:
            raise ConfigError(f"unknown {name} settings: {sorted(unknown)}")
        hyper = replace(hyper, **overrides)
    return hyper


def hyper_to_dict(hyper) -> dict:
    d = asdict(hyper)
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def fit_model(name: str, X, labels, seed: int, hyper=None, n_jobs: int = 1) -> ProbabilisticClassifier:
    """Fit model ``name``; ``seed`` replaces any seed held by ``hyper``."""
    hyper = default_hyper(name) if hyper is None else hyper
    if name == "rf":
        return fit_forest(X, labels, replace(hyper, seed=seed), n_jobs=n_jobs)
    if name == "lm":
        return fit_logistic(X, labels, hyper)
    if name == "nn":
        return fit_mlp(X, labels, replace(hyper, seed=seed))
    raise ConfigError(f"unknown model {name!r}")


def model_to_dict(model) -> dict:
    return model.to_dict()


def model_from_dict(name: str, d: dict) -> ProbabilisticClassifier:
    if name == "rf":
        return Forest.from_dict(d)
    if name == "lm":
        return LogisticModel.from_dict(d)
    if name == "nn":
        return MlpModel.from_dict(d)
    raise ConfigError(f"unknown model {name!r}")


__all__ = [
    "MODEL_NAMES", "DivergenceError", "Forest", "ForestConfig", "LogisticHyper", "LogisticModel",
    "MlpHyper", "MlpModel", "ProbabilisticClassifier", "default_hyper", "fit_model", "hyper_to_dict",
    "make_hyper", "model_from_dict", "model_to_dict",
]
