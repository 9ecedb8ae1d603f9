"""Domain types, routing rules and the exact (non-differentiable) losses."""

from __future__ import annotations

import enum
import zlib
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np


class Route(enum.IntEnum):
    """Rejector decision, encoded as the +1/-1 output of the rejector."""

    LOCAL = 1
    REMOTE = -1

    def __str__(self) -> str:
        return self.name.lower()


def argmax_label(scores: Sequence[float]) -> int:
    """Index of the largest score; ties go to the lowest index."""
    arr = np.asarray(scores, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError("argmax_label needs a non-empty 1-D score vector")
    if not np.all(np.isfinite(arr)):
        raise ValueError("scores must be finite")
    # np.argmax returns the first occurrence of the maximum
    return int(np.argmax(arr))


def route_from_scores(r1: float, r2: float) -> Route:
    """LOCAL iff the local score ``r1`` strictly beats the remote score ``r2``."""
    return Route.LOCAL if r1 > r2 else Route.REMOTE


@dataclass(frozen=True)
class CostParams:
    """Reject cost ``c_e`` and server inaccuracy cost ``c_1``."""

    c_e: float
    c_1: float

    def __post_init__(self):
        if not (self.c_e >= 0 and self.c_1 >= 0):
            raise ValueError(f"costs must be non-negative, got c_e={self.c_e}, c_1={self.c_1}")

    @property
    def threshold_offset(self) -> float:
        """The constant ``1 - c_e - c_1`` shared by the Bayes rule and L2."""
        return 1.0 - self.c_e - self.c_1

    def as_general(self) -> "GeneralCosts":
        return GeneralCosts(0.0, 1.0, self.c_e, self.c_e + self.c_1)


@dataclass(frozen=True)
class GeneralCosts:
    """Costs of the four outcomes: client correct/error, server correct/error."""

    c_cc: float
    c_ce: float
    c_sc: float
    c_se: float

    def __post_init__(self):
        # c_ce <= c_se is deliberately not required: the generalized 0-1
        # special case (0, 1, c_e, c_e + c_1) breaks it whenever c_e + c_1 < 1.
        if not (self.c_cc <= self.c_ce and self.c_sc <= self.c_se and self.c_cc <= self.c_sc):
            raise ValueError("cost ordering violated: need c_cc<=c_ce, c_sc<=c_se, c_cc<=c_sc")


def general_loss(route: Route, local_pred: int, remote_pred: int, y: int,
                 costs: GeneralCosts) -> float:
    if route == Route.LOCAL:
        return costs.c_cc if local_pred == y else costs.c_ce
    return costs.c_sc if remote_pred == y else costs.c_se


def generalized_loss(route: Route, local_pred: int, remote_pred: int, y: int,
                     costs: CostParams) -> float:
    """Generalized 0-1 loss: 0 / 1 locally, c_e / c_e + c_1 remotely."""
    if route == Route.LOCAL:
        return 0.0 if local_pred == y else 1.0
    return costs.c_e if remote_pred == y else costs.c_e + costs.c_1


@dataclass(frozen=True, eq=False)
class Dataset:
    """Feature matrix ``x`` (n x l) with 0-based integer labels ``y``."""

    x: np.ndarray
    y: np.ndarray
    num_classes: int

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.y)
        if x.ndim != 2:
            raise ValueError("features must be a 2-D array (n x l)")
        if y.ndim != 1 or y.shape[0] != x.shape[0]:
            raise ValueError("labels must be a 1-D array matching the number of rows")
        if x.shape[0] < 1:
            raise ValueError("dataset must contain at least one example")
        if not np.all(np.isfinite(x)):
            raise ValueError("features must be finite")
        if not np.issubdtype(y.dtype, np.integer):
            if not np.all(np.equal(np.mod(y, 1), 0)):
                raise ValueError("labels must be integers")
        y = y.astype(np.int64)
        if self.num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        if y.min() < 0 or y.max() >= self.num_classes:
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    def __len__(self) -> int:
        return self.x.shape[0]

    def __iter__(self) -> Iterator[tuple[np.ndarray, int]]:
        for i in range(len(self)):
            yield self.x[i], int(self.y[i])

    def subset(self, idx) -> "Dataset":
        return Dataset(self.x[idx], self.y[idx], self.num_classes)


def derive_seed(master: int, *path: str | int) -> int:
    """Deterministically derive a child seed from ``master`` and a name path.

    Each path component is hashed with CRC32 (strings) or used directly
    (ints) and fed to numpy's ``SeedSequence`` together with the master
    seed, so e.g. ``derive_seed(s, "data")`` never changes when cost grids
    or other components change.
    """
    keys = [int(master) & 0xFFFFFFFFFFFFFFFF]
    for p in path:
        keys.append(zlib.crc32(p.encode()) if isinstance(p, str) else int(p))
    return int(np.random.SeedSequence(keys).generate_state(1, dtype=np.uint64)[0])
