"""Synthetic Gaussian-mixture data and the plain-text feature format."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..core import Dataset
from ..oracle import DiscreteWorld


class FeatureFileError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class GaussianMixtureSpec:
    """K isotropic Gaussians with a shared variance and uniform class prior."""

    means: np.ndarray  # (K, l)
    variance: float = 1.0
    n_train: int = 6000
    n_cali: int = 1000
    n_test: int = 3000

    def __post_init__(self):
        means = np.atleast_2d(np.asarray(self.means, dtype=float))
        object.__setattr__(self, "means", means)
        if means.shape[0] < 2:
            raise ValueError("need at least two classes")
        if not self.variance > 0:
            raise ValueError("variance must be positive")
        if min(self.n_train, self.n_cali, self.n_test) < 1:
            raise ValueError("every split needs at least one sample")

    @property
    def num_classes(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @classmethod
    def ring(cls, num_classes: int = 3, radius: float = 2.0, dim: int = 2,
             **kwargs) -> "GaussianMixtureSpec":
        """Class means evenly spaced on a circle in the first two coordinates."""
        angles = 2 * math.pi * np.arange(num_classes) / num_classes
        means = np.zeros((num_classes, dim))
        means[:, 0] = radius * np.cos(angles)
        if dim > 1:
            means[:, 1] = radius * np.sin(angles)
        return cls(means, **kwargs)

    def posterior(self, x: np.ndarray) -> np.ndarray:
        """Exact class posteriors eta(x) for rows of ``x``."""
        x = np.atleast_2d(x)
        sq = ((x[:, None, :] - self.means[None, :, :]) ** 2).sum(axis=-1)
        logits = -sq / (2 * self.variance)
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        return p / p.sum(axis=1, keepdims=True)

    def sample(self, n: int, rng: np.random.Generator) -> Dataset:
        y = rng.integers(0, self.num_classes, size=n)
        x = self.means[y] + math.sqrt(self.variance) * rng.normal(size=(n, self.dim))
        return Dataset(x, y, self.num_classes)

    def discretize(self, half_width: float = 6.0, cells: int = 121) -> DiscreteWorld:
        """Grid approximation of the mixture as a finite world (2-D only)."""
        if self.dim != 2:
            raise ValueError("discretize supports 2-D mixtures only")
        axis = np.linspace(-half_width, half_width, cells)
        gx, gy = np.meshgrid(axis, axis, indexing="ij")
        pts = np.column_stack([gx.ravel(), gy.ravel()])
        sq = ((pts[:, None, :] - self.means[None, :, :]) ** 2).sum(axis=-1)
        dens = np.exp(-sq / (2 * self.variance)).mean(axis=1)
        return DiscreteWorld(pts, dens / dens.sum(), self.posterior(pts))


def gen_data(spec: GaussianMixtureSpec, seed: int) -> tuple[Dataset, Dataset, Dataset]:
    """Independent train / calibration / test draws; deterministic in ``seed``."""
    streams = np.random.SeedSequence(seed).spawn(3)
    sizes = (spec.n_train, spec.n_cali, spec.n_test)
    return tuple(spec.sample(n, np.random.default_rng(s)) for n, s in zip(sizes, streams))


# -- feature files ------------------------------------------------------------

def write_features(data: Dataset, path) -> None:
    """``K=<int> L=<int>`` header, then one row per example: L floats, 1-based label."""
    with open(path, "w") as fh:
        fh.write(f"K={data.num_classes} L={data.dim}\n")
        for x, y in data:
            fh.write(",".join(format(float(v), ".17g") for v in x) + f",{y + 1}\n")


def ingest_features(path) -> Dataset:
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise FeatureFileError("empty feature file")
    try:
        header = dict(tok.split("=") for tok in lines[0].split())
        K, L = int(header["K"]), int(header["L"])
    except (ValueError, KeyError):
        raise FeatureFileError("first line must be 'K=<int> L=<int>'") from None
    if K < 1 or L < 1:
        raise FeatureFileError("K and L must be positive")
    xs, ys = [], []
    for lineno, line in enumerate(lines[1:], 2):
        if not line.strip():
            continue
        fields = line.split(",")
        if len(fields) != L + 1:
            raise FeatureFileError(f"line {lineno}: expected {L + 1} fields, got {len(fields)}")
        try:
            xs.append([float(v) for v in fields[:L]])
            label = int(fields[L])
        except ValueError:
            raise FeatureFileError(f"line {lineno}: non-numeric field") from None
        if not 1 <= label <= K:
            raise FeatureFileError(f"line {lineno}: label {label} outside 1..{K}")
        ys.append(label - 1)
    if not ys:
        raise FeatureFileError("feature file has no examples")
    x = np.array(xs, dtype=float)
    if not np.all(np.isfinite(x)):
        raise FeatureFileError("non-finite feature value")
    return Dataset(x, np.array(ys), K)
