"""Logistic regression fitted by full-batch gradient descent."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import ClassLabel, ContractError, as_label_array


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""


def sigmoid(a):
    """Numerically stable logistic function."""
    a = np.asarray(a, dtype=float)
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    e = np.exp(a[~pos])
    out[~pos] = e / (1.0 + e)
    return out


@dataclass(frozen=True)
class LogisticHyper:
    l2: float = 1e-6
    step: float = 0.1
    max_iter: int = 1000
    tol: float = 1e-8


@dataclass
class LogisticModel:
    weights: np.ndarray  # bias first
    converged: bool = False
    n_iter: int = 0

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if not np.all(np.isfinite(self.weights)):
            raise ContractError("logistic weights must be finite")

    def decision_function(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.weights.size - 1:
            raise ContractError(f"expected {self.weights.size - 1} features, got {X.shape[1]}")
        return self.weights[0] + X @ self.weights[1:]

    def predict_proba(self, X) -> np.ndarray:
        return sigmoid(self.decision_function(X))

    def to_dict(self) -> dict:
        return {"weights": self.weights.tolist(), "converged": self.converged, "n_iter": self.n_iter}

    @classmethod
    def from_dict(cls, d: dict) -> "LogisticModel":
        return cls(np.asarray(d["weights"], dtype=float), d["converged"], d["n_iter"])


def loss_and_grad(beta: np.ndarray, X: np.ndarray, t: np.ndarray, l2: float):
    """Mean negative log-likelihood plus ``l2/2 * |w|^2`` (bias unpenalized)."""
    a = beta[0] + X @ beta[1:]
    nll = np.mean(np.logaddexp(0.0, a) - t * a)
    loss = nll + 0.5 * l2 * float(beta[1:] @ beta[1:])
    r = (sigmoid(a) - t) / t.size
    grad = np.empty_like(beta)
    grad[0] = r.sum()
    grad[1:] = X.T @ r + l2 * beta[1:]
    return float(loss), grad


def fit_logistic(X, labels, hyper: LogisticHyper = LogisticHyper()) -> LogisticModel:
    X = np.asarray(X, dtype=float)
    y = as_label_array(labels)
    t = (y == ClassLabel.CLASS2).astype(float)
    if t.size == 0 or t.min() == t.max():
        raise ContractError("logistic regression needs both classes present")
    beta = np.zeros(X.shape[1] + 1)
    loss, grad = loss_and_grad(beta, X, t, hyper.l2)
    converged = False
    it = 0
    for it in range(1, hyper.max_iter + 1):
        beta = beta - hyper.step * grad
        new_loss, grad = loss_and_grad(beta, X, t, hyper.l2)
        if not np.isfinite(new_loss):
            raise DivergenceError(f"logistic loss became non-finite at iteration {it}")
        if abs(loss - new_loss) < hyper.tol:
            converged = True
            loss = new_loss
            break
        loss = new_loss
    return LogisticModel(beta, converged, it)


def logistic_predict(model: LogisticModel, x) -> float:
    return float(model.predict_proba(np.atleast_2d(x))[0])
