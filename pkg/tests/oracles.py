"""Independent reference computations shared by the test modules.

Nothing here imports interfreq internals beyond plain values, so a bug in
the package cannot be mirrored by its oracle.
"""

from fractions import Fraction

import numpy as np


def three_way(p, d1, d2):
    if p <= d1:
        return "stay"
    if p >= d2:
        return "handover"
    return "measure"


def duo_recount(probs, labels, d1, d2):
    """Per-observation decision then tally, returning counts and exact rates."""
    c = dict(tp=0, tn=0, fp=0, fn=0, n_mp=0, n_mn=0)
    for p, y in zip(probs, labels):
        action = three_way(float(p), d1, d2)
        positive = int(y) == 2
        if action == "measure":
            c["n_mp" if positive else "n_mn"] += 1
        elif action == "handover":
            c["tp" if positive else "fp"] += 1
        else:
            c["fn" if positive else "tn"] += 1
    pos_den = c["tp"] + c["fn"] + c["n_mp"]
    neg_den = c["tn"] + c["fp"] + c["n_mn"]
    c["tpr_d"] = Fraction(c["tp"] + c["n_mp"], pos_den) if pos_den else Fraction(1)
    c["tnr_d"] = Fraction(c["tn"] + c["n_mn"], neg_den) if neg_den else Fraction(1)
    c["share"] = Fraction(c["n_mp"] + c["n_mn"], len(labels))
    return c


def random_instance(rng, max_len=200, lattice_share=0.3):
    """Probabilities mixing continuous draws with lattice and end points.

    ``lattice_share=0`` gives purely continuous draws, which never land on
    a 0.05 lattice point in practice.
    """
    n = int(rng.integers(1, max_len + 1))
    probs = rng.random(n)
    on_grid = rng.random(n) < lattice_share
    probs[on_grid] = rng.integers(0, 21, on_grid.sum()) / 20
    labels = rng.integers(1, 3, n)
    return probs, labels


def random_thresholds(rng):
    if rng.random() < 0.5:
        a, b = sorted(rng.integers(0, 21, 2) / 20)
    else:
        a, b = sorted(rng.random(2))
    return float(a), float(b)


def central_difference(f, theta, h=1e-5):
    theta = np.asarray(theta, dtype=float)
    g = np.empty_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        g[i] = (f(theta + e) - f(theta - e)) / (2 * h)
    return g


def relative_error(a, b):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-300))


def logistic_loss(beta, X, t, l2):
    """Penalized mean negative log-likelihood with the bias first and unpenalized."""
    p = 1.0 / (1.0 + np.exp(-(beta[0] + X @ beta[1:])))
    return float(-np.mean(t * np.log(p) + (1 - t) * np.log(1 - p)) + 0.5 * l2 * beta[1:] @ beta[1:])


def mlp_loss(theta, shapes, X, t):
    """Cross-entropy of a sigmoid network whose weights are packed layer by layer as (W, b)."""
    a, pos = X, 0
    for fan_in, fan_out in shapes:
        W = theta[pos:pos + fan_in * fan_out].reshape(fan_in, fan_out)
        pos += fan_in * fan_out
        b = theta[pos:pos + fan_out]
        pos += fan_out
        a = 1.0 / (1.0 + np.exp(-(a @ W + b)))
    p = a[:, 0]
    return float(-np.mean(t * np.log(p) + (1 - t) * np.log(1 - p)))
