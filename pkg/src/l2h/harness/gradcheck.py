"""Central finite-difference checks of the analytic gradients."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .. import losses, models
from ..losses import L2Weights

FD_STEP = 1e-5
# denominator floor so gradients that are (numerically) zero compare absolutely
_FLOOR = 1e-6


def numeric_grad(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    x = np.array(x, dtype=float)
    g = np.empty_like(x)
    for i in np.ndindex(x.shape):
        old = x[i]
        x[i] = old + h
        up = f(x)
        x[i] = old - h
        down = f(x)
        x[i] = old
        g[i] = (up - down) / (2 * h)
    return g


def rel_error(analytic, numeric) -> float:
    a, n = np.ravel(analytic), np.ravel(numeric)
    return float(np.linalg.norm(a - n) / max(np.linalg.norm(a), np.linalg.norm(n), _FLOOR))


def _random_weights(rng: np.random.Generator) -> L2Weights:
    # a covers negative, zero and positive offsets; b is an indicator
    return L2Weights(float(rng.choice([rng.uniform(-1.5, 2.0), 0.0])), float(rng.integers(0, 2)))


def check_l1_scores(rng) -> float:
    K = int(rng.integers(2, 7))
    s = rng.normal(scale=3.0, size=K)
    y = int(rng.integers(K))
    return rel_error(losses.l1_grad_scores(s, y), numeric_grad(lambda v: losses.l1_loss(v, y), s))


def check_l2_scores(rng) -> float:
    w = _random_weights(rng)
    r = rng.normal(scale=3.0, size=2)
    f = losses.l2_surface(w)
    return rel_error(np.array(losses.l2_grad(r[0], r[1], w)), numeric_grad(f, r))


def _param_error(model: models.ScoreModel, report: losses.GradReport,
                 loss_of: Callable[[models.ScoreModel], float]) -> float:
    analytic = np.concatenate([report.param_grads[k].ravel() for k in model.param_names])
    numeric = numeric_grad(lambda flat: loss_of(model.with_flat_params(flat)),
                           model.flat_params())
    return rel_error(analytic, numeric)


def check_backprop_l1(rng, arch: str) -> float:
    d, K = int(rng.integers(1, 5)), int(rng.integers(2, 6))
    model = models.init_model(arch, d, K, int(rng.integers(2**31)), hidden=8)
    x = rng.normal(size=d)
    y = int(rng.integers(K))
    rep = losses.backprop_l1(model, x, y)
    return _param_error(model, rep, lambda m: losses.l1_loss(m.forward(x), y))


def check_backprop_l2(rng, arch: str) -> float:
    d = int(rng.integers(1, 5))
    model = models.init_model(arch, d, 2, int(rng.integers(2**31)), hidden=8)
    x = rng.normal(size=d)
    w = _random_weights(rng)

    def loss_of(m):
        r = m.forward(x)
        return losses.l2_loss(float(r[0]), float(r[1]), w)

    return _param_error(model, losses.backprop_l2(model, x, w), loss_of)


CASES = {
    "l1_scores": check_l1_scores,
    "l2_scores": check_l2_scores,
    "l1_linear": lambda rng: check_backprop_l1(rng, "linear"),
    "l1_mlp1": lambda rng: check_backprop_l1(rng, "mlp1"),
    "l2_linear": lambda rng: check_backprop_l2(rng, "linear"),
    "l2_mlp1": lambda rng: check_backprop_l2(rng, "mlp1"),
}


def run_gradcheck(configs: int = 100, seed: int = 0) -> dict[str, float]:
    """Worst relative error per case over ``configs`` random configurations."""
    out = {}
    for i, (name, check) in enumerate(CASES.items()):
        rng = np.random.default_rng([seed, i])
        out[name] = max(check(rng) for _ in range(configs))
    return out
