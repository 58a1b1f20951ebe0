"""Fully connected sigmoid network trained by backpropagation.

All hidden units and the single output unit use the logistic sigmoid; the
loss is mean binary cross-entropy. Training is full-batch with early
stopping on a held-out slice of the training rows.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from ..core import ClassLabel, ConfigError, ContractError, as_label_array
from .logistic import DivergenceError, sigmoid

Params = List[Tuple[np.ndarray, np.ndarray]]  # (W: fan_in x fan_out, b: fan_out)


@dataclass(frozen=True)
class MlpHyper:
    hidden: Tuple[int, ...] = (50, 30, 10)
    optimizer: str = "rprop"  # "rprop" or "gd"
    learning_rate: float = 0.05
    max_epochs: int = 500
    patience: int = 10
    validation_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if any(h < 1 for h in self.hidden):
            raise ConfigError("hidden layer sizes must be >= 1")
        if self.optimizer not in ("gd", "rprop"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ConfigError("validation_fraction must lie in [0, 1)")


@dataclass
class MlpModel:
    params: Params
    epochs: int = 0
    best_epoch: int = 0

    def __post_init__(self):
        for (w, b), (w_next, _) in zip(self.params, self.params[1:]):
            if w.shape[1] != b.size or w.shape[1] != w_next.shape[0]:
                raise ContractError("layer dimensions do not chain")
        if self.params[-1][0].shape[1] != 1:
            raise ContractError("output layer must have one unit")
        if not all(np.all(np.isfinite(w)) and np.all(np.isfinite(b)) for w, b in self.params):
            raise ContractError("network parameters must be finite")

    @property
    def input_dim(self) -> int:
        return self.params[0][0].shape[0]

    def predict_proba(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.input_dim:
            raise ContractError(f"expected {self.input_dim} features, got {X.shape[1]}")
        return forward(self.params, X)[-1][:, 0]

    def to_dict(self) -> dict:
        return {"layers": [{"W": w.tolist(), "b": b.tolist()} for w, b in self.params],
                "epochs": self.epochs, "best_epoch": self.best_epoch}

    @classmethod
    def from_dict(cls, d: dict) -> "MlpModel":
        params = [(np.asarray(l["W"], dtype=float).reshape(len(l["W"]), -1), np.asarray(l["b"], dtype=float))
                  for l in d["layers"]]
        return cls(params, d["epochs"], d["best_epoch"])


def init_params(sizes: Sequence[int], rng: np.random.Generator) -> Params:
    """Glorot-uniform weights, zero biases."""
    params = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        params.append((rng.uniform(-limit, limit, size=(fan_in, fan_out)), np.zeros(fan_out)))
    return params


def forward(params: Params, X: np.ndarray) -> List[np.ndarray]:
    """Activations of every layer, input first, output last."""
    acts = [X]
    for w, b in params:
        acts.append(sigmoid(acts[-1] @ w + b))
    return acts


def cross_entropy(p: np.ndarray, t: np.ndarray) -> float:
    eps = 1e-12
    p = np.clip(p, eps, 1.0 - eps)
    return float(-np.mean(t * np.log(p) + (1.0 - t) * np.log1p(-p)))


def loss_and_grad(params: Params, X: np.ndarray, t: np.ndarray):
    """Mean cross-entropy and its gradient by backpropagation."""
    acts = forward(params, X)
    p = acts[-1][:, 0]
    # log-loss on the pre-activation keeps saturated outputs finite
    w, b = params[-1]
    a_out = acts[-2] @ w[:, 0] + b[0]
    loss = float(np.mean(np.logaddexp(0.0, a_out) - t * a_out))
    delta = ((p - t) / t.size)[:, None]
    grads: Params = []
    for layer in range(len(params) - 1, -1, -1):
        w, _ = params[layer]
        a_in = acts[layer]
        grads.append((a_in.T @ delta, delta.sum(axis=0)))
        if layer:
            delta = (delta @ w.T) * a_in * (1.0 - a_in)
    grads.reverse()
    return loss, grads


def _flat(params: Params) -> np.ndarray:
    return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in params])


def _unflat(vec: np.ndarray, like: Params) -> Params:
    out, i = [], 0
    for w, b in like:
        nw = vec[i:i + w.size].reshape(w.shape)
        i += w.size
        nb = vec[i:i + b.size]
        i += b.size
        out.append((nw, nb))
    return out


class _Rprop:
    """Resilient backpropagation with weight backtracking (Rprop+)."""

    def __init__(self, n: int, step0: float = 0.1, eta_minus: float = 0.5, eta_plus: float = 1.2,
                 step_min: float = 1e-6, step_max: float = 50.0):
        self.step = np.full(n, step0)
        self.prev_grad = np.zeros(n)
        self.prev_update = np.zeros(n)
        self.eta_minus, self.eta_plus = eta_minus, eta_plus
        self.step_min, self.step_max = step_min, step_max

    def update(self, theta: np.ndarray, grad: np.ndarray) -> np.ndarray:
        sign = self.prev_grad * grad
        grow, shrink = sign > 0, sign < 0
        self.step[grow] = np.minimum(self.step[grow] * self.eta_plus, self.step_max)
        self.step[shrink] = np.maximum(self.step[shrink] * self.eta_minus, self.step_min)
        update = -np.sign(grad) * self.step
        update[shrink] = -self.prev_update[shrink]
        grad = grad.copy()
        grad[shrink] = 0.0
        self.prev_grad = grad
        self.prev_update = update
        return theta + update


def fit_mlp(X, labels, hyper: MlpHyper = MlpHyper()) -> MlpModel:
    """Train with early stopping; returns the best-validation parameters.

    Rows are shuffled once and the last ``validation_fraction`` of them is
    held out. Training stops after ``patience`` epochs without a new best
    validation loss, or at ``max_epochs``.
    """
    X = np.asarray(X, dtype=float)
    y = as_label_array(labels)
    t_all = (y == ClassLabel.CLASS2).astype(float)
    if t_all.size == 0 or t_all.min() == t_all.max():
        raise ContractError("MLP training needs both classes present")
    rng = np.random.default_rng(hyper.seed)
    n = X.shape[0]
    perm = rng.permutation(n)
    n_val = int(round(hyper.validation_fraction * n)) if n >= 5 else 0
    tr, va = perm[:n - n_val], perm[n - n_val:]
    X_tr, t_tr = X[tr], t_all[tr]
    X_va, t_va = X[va], t_all[va]

    params = init_params((X.shape[1],) + hyper.hidden + (1,), rng)
    theta = _flat(params)
    rprop = _Rprop(theta.size) if hyper.optimizer == "rprop" else None

    def val_loss(p: Params) -> float:
        if n_val == 0:
            return loss_and_grad(p, X_tr, t_tr)[0]
        return cross_entropy(forward(p, X_va)[-1][:, 0], t_va)

    best_theta, best_val, best_epoch = theta.copy(), val_loss(params), 0
    since_best = 0
    epoch = 0
    for epoch in range(1, hyper.max_epochs + 1):
        loss, grads = loss_and_grad(_unflat(theta, params), X_tr, t_tr)
        if not np.isfinite(loss):
            raise DivergenceError(f"MLP loss became non-finite at epoch {epoch}")
        g = _flat(grads)
        theta = rprop.update(theta, g) if rprop is not None else theta - hyper.learning_rate * g
        v = val_loss(_unflat(theta, params))
        if not np.isfinite(v):
            raise DivergenceError(f"MLP validation loss became non-finite at epoch {epoch}")
        if v < best_val:
            best_theta, best_val, best_epoch, since_best = theta.copy(), v, epoch, 0
        else:
            since_best += 1
            if since_best >= hyper.patience:
                break
    return MlpModel(_unflat(best_theta, params), epoch, best_epoch)


def mlp_predict(model: MlpModel, x) -> float:
    return float(model.predict_proba(np.atleast_2d(x))[0])
