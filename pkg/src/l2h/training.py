"""Stage-switching SGD: synchronous (pay-per-request) and asynchronous
(intermittent availability) training of the server and rejector."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import losses, models
from .core import CostParams, Dataset
from .losses import GradReport
from .models import FrozenModelError, HybridSystem, ScoreModel


@dataclass(frozen=True)
class SgdConfig:
    lr_server: float = 0.05
    lr_rejector: float = 0.05
    epochs: int = 1
    shuffle: bool = True
    seed: int = 0

    def __post_init__(self):
        if not (self.lr_server > 0 and self.lr_rejector > 0):
            raise ValueError("learning rates must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


@dataclass(frozen=True)
class AsyncConfig:
    sync_interval: int = 1

    def __post_init__(self):
        if self.sync_interval < 1:
            raise ValueError("sync_interval must be >= 1")


@dataclass(eq=False)
class TrainTrace:
    """Per-step losses; ``l1[t]`` and ``l2[t]`` are evaluated before step t's updates."""

    l1: np.ndarray
    l2: np.ndarray
    epoch_means: list[dict] = field(default_factory=list)
    # wall-clock seconds per stage; excluded from equality and default export
    timings: np.ndarray | None = None

    @property
    def steps(self) -> int:
        return self.l1.size

    @property
    def l_s(self) -> np.ndarray:
        return self.l1 + self.l2

    def running_mean(self, window: int) -> np.ndarray:
        """Trailing mean of L_S over at most ``window`` steps."""
        c = np.concatenate([[0.0], np.cumsum(self.l_s)])
        idx = np.arange(1, self.steps + 1)
        lo = np.maximum(idx - window, 0)
        return (c[idx] - c[lo]) / (idx - lo)

    def final_mean(self, window: int = 500) -> float:
        return float(self.l_s[-window:].mean())

    def same_as(self, other: "TrainTrace") -> bool:
        return bool(np.array_equal(self.l1, other.l1) and np.array_equal(self.l2, other.l2))

    def records(self, include_timings: bool = False):
        for t in range(self.steps):
            rec = {"step": t + 1, "l1": float(self.l1[t]), "l2": float(self.l2[t]),
                   "l_s": float(self.l1[t] + self.l2[t])}
            if include_timings and self.timings is not None:
                rec["t_server"] = float(self.timings[t, 0])
                rec["t_rejector"] = float(self.timings[t, 1])
            yield rec

    def write_jsonl(self, path, include_timings: bool = False) -> None:
        with open(path, "w") as fh:
            for rec in self.records(include_timings):
                fh.write(json.dumps(rec) + "\n")


def sgd_step(model: ScoreModel, grads: GradReport | dict, lr: float) -> ScoreModel:
    """Return a new model with ``params - lr * grad``."""
    if model.frozen:
        raise FrozenModelError("refusing to update a frozen model")
    g = grads.param_grads if isinstance(grads, GradReport) else grads
    new = model.copy()
    _update_inplace(new, g, lr)
    return new


def _update_inplace(model: ScoreModel, grads: dict, lr: float) -> None:
    for name, g in grads.items():
        p = model.params[name]
        p -= lr * g


def _check_inputs(system: HybridSystem, data: Dataset) -> None:
    if len(data) == 0:
        raise ValueError("empty dataset")
    if data.dim != system.server.input_dim:
        raise ValueError(f"data dimension {data.dim} does not match the models "
                         f"({system.server.input_dim})")
    if data.num_classes != system.num_classes:
        raise ValueError("dataset and system disagree on the number of classes")


def _run(system: HybridSystem, data: Dataset, costs: CostParams, cfg: SgdConfig,
         sync_interval: int | None) -> tuple[HybridSystem, TrainTrace]:
    _check_inputs(system, data)
    client = system.client
    server = system.server.copy(frozen=False)
    rejector = system.rejector.copy(frozen=False)
    snapshot = server.copy() if sync_interval is not None else None

    n = len(data)
    total = n * cfg.epochs
    l1_trace = np.empty(total)
    l2_trace = np.empty(total)
    timings = np.empty((total, 2))
    # the client never changes, so its per-sample correctness is fixed
    client_ok = (client.predict_batch(data.x) == data.y).astype(float)
    rng = np.random.default_rng(cfg.seed)
    X, Y = data.x, data.y
    offset, c_1 = costs.threshold_offset, costs.c_1
    lr_e, lr_r = cfg.lr_server, cfg.lr_rejector
    epoch_means = []

    t = 0  # global 1-based step counter after increment
    for epoch in range(cfg.epochs):
        order = rng.permutation(n) if cfg.shuffle else np.arange(n)
        for i in order:
            x, y = X[i], int(Y[i])
            t += 1
            t0 = time.perf_counter()
            # server stage: one L1 step
            scores, cache = models.forward_cached(server, x)
            g = losses.l1_grad_scores(scores, y)
            l1_trace[t - 1] = losses.l1_loss(scores, y)
            _update_inplace(server, models.backward(server, cache, g), lr_e)
            t1 = time.perf_counter()

            # rejector stage: L2 weights from the updated (or stale) server
            if snapshot is None:
                e_scores = models.forward_cached(server, x)[0]
            else:
                if (t - 1) % sync_interval == 0:
                    snapshot = server.copy()
                e_scores = models.forward_cached(snapshot, x)[0]
            a = offset + (c_1 if int(np.argmax(e_scores)) == y else 0.0)
            w = losses.L2Weights(a, client_ok[i])
            r_scores, r_cache = models.forward_cached(rejector, x)
            r1, r2 = float(r_scores[0]), float(r_scores[1])
            l2_trace[t - 1] = losses.l2_loss(r1, r2, w)
            d1, d2 = losses.l2_grad(r1, r2, w)
            _update_inplace(rejector, models.backward(rejector, r_cache, np.array([d1, d2])), lr_r)
            timings[t - 1] = (t1 - t0, time.perf_counter() - t1)
        lo = epoch * n
        epoch_means.append({
            "epoch": epoch + 1,
            "l1": float(l1_trace[lo:t].mean()),
            "l2": float(l2_trace[lo:t].mean()),
        })

    trace = TrainTrace(l1_trace, l2_trace, epoch_means, timings)
    for m in (server, rejector):
        m.meta.update(c_e=repr(costs.c_e), c_1=repr(costs.c_1),
                      sync_interval=str(sync_interval or 0))
    return HybridSystem(client, rejector, server), trace


def train_sync(system: HybridSystem, data: Dataset, costs: CostParams,
               cfg: SgdConfig = SgdConfig()) -> tuple[HybridSystem, TrainTrace]:
    """Alternate one server (L1) step and one rejector (L2) step per sample.

    The rejector's L2 weight uses the server *after* this sample's update.
    Returns new models; the inputs are not modified.
    """
    return _run(system, data, costs, cfg, None)


def train_async(system: HybridSystem, data: Dataset, costs: CostParams,
                cfg: SgdConfig = SgdConfig(),
                async_cfg: AsyncConfig = AsyncConfig()) -> tuple[HybridSystem, TrainTrace]:
    """Like :func:`train_sync`, but L2 sees a stale copy of the server.

    The copy is refreshed right after the server step at global steps
    t = 1, 1 + S, 1 + 2S, ... (t counts from 1 across epochs), so S = 1
    reproduces the synchronous loop exactly.
    """
    return _run(system, data, costs, cfg, async_cfg.sync_interval)


def train_classifier(model: ScoreModel, data: Dataset, lr: float = 0.05, epochs: int = 1,
                     seed: int = 0, shuffle: bool = True) -> tuple[ScoreModel, np.ndarray]:
    """Plain per-sample cross-entropy SGD; returns a new model and the loss trace."""
    if model.frozen:
        raise FrozenModelError("refusing to train a frozen model")
    if data.dim != model.input_dim or data.num_classes != model.output_dim:
        raise ValueError("data does not match the model dimensions")
    model = model.copy()
    rng = np.random.default_rng(seed)
    trace = np.empty(len(data) * epochs)
    t = 0
    for _ in range(epochs):
        order = rng.permutation(len(data)) if shuffle else np.arange(len(data))
        for i in order:
            x, y = data.x[i], int(data.y[i])
            scores, cache = models.forward_cached(model, x)
            trace[t] = losses.l1_loss(scores, y)
            _update_inplace(model, models.backward(model, cache, losses.l1_grad_scores(scores, y)), lr)
            t += 1
    return model, trace
