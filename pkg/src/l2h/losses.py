"""The stage-switching surrogate: L1 (server cross-entropy) + L2 (rejector).

L2 for fixed weights ``(a, b)`` depends on the rejector scores only through
``d = r1 - r2``::

    L2 = -a * log softmax_2(r) - b * log softmax_1(r)
       =  a * softplus(d)     + b * softplus(-d)

which is how it is evaluated here (no overflow for large |d|).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import models
from .core import CostParams
from .models import ScoreModel


def log_softmax(scores: np.ndarray) -> np.ndarray:
    s = np.asarray(scores, dtype=float)
    shifted = s - s.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(scores: np.ndarray) -> np.ndarray:
    s = np.asarray(scores, dtype=float)
    e = np.exp(s - s.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _softplus(t: float) -> float:
    # log(1 + e^t) without overflow
    return max(t, 0.0) + math.log1p(math.exp(-abs(t)))


def _sigmoid(t: float) -> float:
    if t >= 0:
        return 1.0 / (1.0 + math.exp(-t))
    e = math.exp(t)
    return e / (1.0 + e)


# -- L1 -------------------------------------------------------------------

def l1_loss(e_scores, y: int) -> float:
    return float(-log_softmax(e_scores)[y])


def l1_grad_scores(e_scores, y: int) -> np.ndarray:
    g = softmax(e_scores)
    g[y] -= 1.0
    return g


# -- L2 -------------------------------------------------------------------

@dataclass(frozen=True)
class L2Weights:
    """Coefficient ``a`` of the remote term and ``b`` of the local term."""

    a: float
    b: float


def l2_weights(e_pred: int, m_pred: int, y: int, costs: CostParams) -> L2Weights:
    a = costs.threshold_offset + (costs.c_1 if e_pred == y else 0.0)
    return L2Weights(a, 1.0 if m_pred == y else 0.0)


def l2_loss(r1: float, r2: float, w: L2Weights) -> float:
    d = r1 - r2
    loss = 0.0
    # skipping a zero coefficient avoids 0 * inf when |d| is huge
    if w.a != 0.0:
        loss += w.a * _softplus(d)
    if w.b != 0.0:
        loss += w.b * _softplus(-d)
    return loss


def l2_grad(r1: float, r2: float, w: L2Weights) -> tuple[float, float]:
    """Partial derivatives (dL2/dr1, dL2/dr2); they always sum to zero."""
    s1 = _sigmoid(r1 - r2)
    d1 = w.a * s1 - w.b * (1.0 - s1)
    return d1, -d1


def surrogate_loss(r_scores, e_scores, y: int, m_pred: int, costs: CostParams) -> float:
    """L_S = L1 + L2 for one sample, with e's prediction taken from ``e_scores``."""
    e_pred = int(np.argmax(e_scores))
    w = l2_weights(e_pred, m_pred, y, costs)
    return l1_loss(e_scores, y) + l2_loss(r_scores[0], r_scores[1], w)


# -- backprop through the score models -------------------------------------

@dataclass
class GradReport:
    loss: float
    score_grad: np.ndarray
    param_grads: dict[str, np.ndarray]


def backprop_l1(server: ScoreModel, x, y: int) -> GradReport:
    x = server._check_input(x)
    scores, cache = models.forward_cached(server, x)
    g = l1_grad_scores(scores, y)
    return GradReport(l1_loss(scores, y), g, models.backward(server, cache, g))


def backprop_l2(rejector: ScoreModel, x, w: L2Weights) -> GradReport:
    if rejector.output_dim != 2:
        raise ValueError("rejector must have exactly 2 outputs")
    x = rejector._check_input(x)
    scores, cache = models.forward_cached(rejector, x)
    r1, r2 = float(scores[0]), float(scores[1])
    g = np.array(l2_grad(r1, r2, w))
    return GradReport(l2_loss(r1, r2, w), g, models.backward(rejector, cache, g))


# -- convexity diagnostics -----------------------------------------------------

def l2_surface(w: L2Weights) -> Callable[[np.ndarray], float]:
    """L2 as a function of the point (r1, r2) for fixed weights."""
    return lambda r: l2_loss(float(r[0]), float(r[1]), w)


def chord_gap(f: Callable[[np.ndarray], float], u, v) -> float:
    """(f(u) + f(v)) / 2 - f((u + v) / 2); non-negative for convex ``f``."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    return 0.5 * (f(u) + f(v)) - f(0.5 * (u + v))
