"""Score functions for the client, server and rejector.

Two architectures are supported: ``linear`` (scores = W x + b) and
``mlp1`` (one rectified hidden layer).  Gradients are computed by hand,
so a model is just a dict of named numpy arrays plus shape metadata.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import Route, argmax_label, route_from_scores

FORMAT_VERSION = 1
ARCHITECTURES = ("linear", "mlp1")
DEFAULT_HIDDEN = 32


class FrozenModelError(RuntimeError):
    """Raised when an update is attempted on a frozen (client) model."""


class CheckpointError(ValueError):
    pass


def _param_shapes(arch: str, input_dim: int, output_dim: int, hidden: int):
    if arch == "linear":
        return {"W": (output_dim, input_dim), "b": (output_dim,)}
    if arch == "mlp1":
        return {
            "W1": (hidden, input_dim),
            "b1": (hidden,),
            "W2": (output_dim, hidden),
            "b2": (output_dim,),
        }
    raise ValueError(f"unknown architecture {arch!r}; expected one of {ARCHITECTURES}")


@dataclass(eq=False)
class ScoreModel:
    arch: str
    input_dim: int
    output_dim: int
    params: dict[str, np.ndarray]
    hidden: int = 0
    frozen: bool = False
    meta: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.arch == "mlp1" and self.hidden < 1:
            raise ValueError("mlp1 needs hidden >= 1")
        shapes = _param_shapes(self.arch, self.input_dim, self.output_dim, self.hidden)
        if set(shapes) != set(self.params):
            raise ValueError(f"expected parameters {sorted(shapes)}, got {sorted(self.params)}")
        for name, shape in shapes.items():
            p = np.asarray(self.params[name], dtype=float)
            if p.shape != shape:
                raise ValueError(f"parameter {name} has shape {p.shape}, expected {shape}")
            if not np.all(np.isfinite(p)):
                raise ValueError(f"parameter {name} has non-finite entries")
            self.params[name] = p

    # -- evaluation -------------------------------------------------------

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.input_dim:
            raise ValueError(f"input has dimension {x.shape[-1]}, model expects {self.input_dim}")
        return x

    def forward(self, x) -> np.ndarray:
        """Scores for one input (shape ``(l,)``) or a batch (shape ``(n, l)``)."""
        x = self._check_input(x)
        p = self.params
        if self.arch == "linear":
            return x @ p["W"].T + p["b"]
        h = np.maximum(x @ p["W1"].T + p["b1"], 0.0)
        return h @ p["W2"].T + p["b2"]

    def predict(self, x) -> int:
        return argmax_label(self.forward(x))

    def predict_batch(self, x) -> np.ndarray:
        return np.argmax(self.forward(x), axis=-1)

    # -- parameters -------------------------------------------------------

    @property
    def param_names(self) -> tuple[str, ...]:
        return tuple(_param_shapes(self.arch, self.input_dim, self.output_dim, self.hidden))

    def flat_params(self) -> np.ndarray:
        return np.concatenate([self.params[n].ravel() for n in self.param_names])

    def with_flat_params(self, flat) -> "ScoreModel":
        flat = np.asarray(flat, dtype=float)
        out, pos = {}, 0
        for name in self.param_names:
            shape = self.params[name].shape
            size = int(np.prod(shape))
            out[name] = flat[pos:pos + size].reshape(shape).copy()
            pos += size
        if pos != flat.size:
            raise ValueError(f"expected {pos} parameters, got {flat.size}")
        return ScoreModel(self.arch, self.input_dim, self.output_dim, out,
                          self.hidden, self.frozen, dict(self.meta))

    def copy(self, frozen: bool | None = None) -> "ScoreModel":
        m = ScoreModel(self.arch, self.input_dim, self.output_dim,
                       {k: v.copy() for k, v in self.params.items()},
                       self.hidden, self.frozen, dict(self.meta))
        if frozen is not None:
            m.frozen = frozen
        return m

    def freeze(self) -> "ScoreModel":
        return self.copy(frozen=True)


def forward_cached(model: ScoreModel, x: np.ndarray):
    """Single-sample forward pass that also returns what backward() needs."""
    p = model.params
    if model.arch == "linear":
        return p["W"] @ x + p["b"], (x,)
    z = p["W1"] @ x + p["b1"]
    h = np.maximum(z, 0.0)
    return p["W2"] @ h + p["b2"], (x, z, h)


def backward(model: ScoreModel, cache, d_scores: np.ndarray) -> dict[str, np.ndarray]:
    """Parameter gradients given dLoss/dScores for a single sample.

    The rectifier's subgradient at exactly 0 is taken to be 0.
    """
    p = model.params
    if model.arch == "linear":
        (x,) = cache
        return {"W": np.outer(d_scores, x), "b": d_scores.copy()}
    x, z, h = cache
    dz = (p["W2"].T @ d_scores) * (z > 0.0)
    return {
        "W1": np.outer(dz, x),
        "b1": dz,
        "W2": np.outer(d_scores, h),
        "b2": d_scores.copy(),
    }


def init_model(arch: str, input_dim: int, output_dim: int, seed: int,
               hidden: int = DEFAULT_HIDDEN) -> ScoreModel:
    """Uniform fan-in initialization in [-1/sqrt(fan_in), 1/sqrt(fan_in)]."""
    if input_dim < 1 or output_dim < 1:
        raise ValueError("dimensions must be positive")
    rng = np.random.default_rng(seed)
    if arch != "mlp1":
        hidden = 0
    shapes = _param_shapes(arch, input_dim, output_dim, hidden)
    params = {}
    for name, shape in shapes.items():
        fan_in = input_dim if name in ("W", "b", "W1", "b1") else hidden
        s = 1.0 / math.sqrt(fan_in)
        params[name] = rng.uniform(-s, s, size=shape)
    return ScoreModel(arch, input_dim, output_dim, params, hidden,
                      meta={"seed": str(seed)})


@dataclass(eq=False)
class HybridSystem:
    """The (client, rejector, server) triple.

    The rejector's output 0 is the LOCAL score r_1 and output 1 the REMOTE
    score r_2.
    """

    client: ScoreModel
    rejector: ScoreModel
    server: ScoreModel

    def __post_init__(self):
        if not self.client.frozen:
            self.client = self.client.freeze()
        if self.rejector.output_dim != 2:
            raise ValueError("rejector must have exactly 2 outputs")
        if self.client.output_dim != self.server.output_dim:
            raise ValueError("client and server must share the number of classes")
        dims = {self.client.input_dim, self.rejector.input_dim, self.server.input_dim}
        if len(dims) != 1:
            raise ValueError("client, rejector and server must share the input dimension")

    @property
    def num_classes(self) -> int:
        return self.server.output_dim

    def route(self, x) -> Route:
        return route(self.rejector, x)

    def routes(self, x) -> np.ndarray:
        """+1 (LOCAL) / -1 (REMOTE) for every row of ``x``."""
        s = self.rejector.forward(x)
        return np.where(s[..., 0] > s[..., 1], 1, -1)

    def predict(self, x) -> int:
        if self.route(x) == Route.LOCAL:
            return self.client.predict(x)
        return self.server.predict(x)

    def copy(self) -> "HybridSystem":
        return HybridSystem(self.client, self.rejector.copy(), self.server.copy())


def route(rejector: ScoreModel, x) -> Route:
    if rejector.output_dim != 2:
        raise ValueError("rejector must have exactly 2 outputs")
    r1, r2 = rejector.forward(x)
    return route_from_scores(r1, r2)


# -- checkpoints ----------------------------------------------------------

def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def dumps_model(model: ScoreModel) -> str:
    lines = [
        f"format_version={FORMAT_VERSION}",
        f"architecture={model.arch}",
        f"input_dim={model.input_dim}",
        f"output_dim={model.output_dim}",
        f"hidden={model.hidden}",
        f"frozen={'true' if model.frozen else 'false'}",
    ]
    for k in sorted(model.meta):
        lines.append(f"meta.{k}={model.meta[k]}")
    for name in model.param_names:
        arr = model.params[name]
        lines.append(f"param.{name}=" + ",".join(_fmt(v) for v in arr.ravel()))
    return "\n".join(lines) + "\n"


def loads_model(text: str) -> ScoreModel:
    fields: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise CheckpointError(f"line {lineno}: expected key=value")
        fields[key.strip()] = value.strip()
    try:
        version = int(fields["format_version"])
    except (KeyError, ValueError):
        raise CheckpointError("missing or malformed format_version") from None
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported format_version {version} (expected {FORMAT_VERSION})")
    try:
        arch = fields["architecture"]
        input_dim = int(fields["input_dim"])
        output_dim = int(fields["output_dim"])
        hidden = int(fields.get("hidden", "0"))
        frozen = fields.get("frozen", "false") == "true"
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"malformed header: {exc}") from None
    try:
        shapes = _param_shapes(arch, input_dim, output_dim, hidden)
    except ValueError as exc:
        raise CheckpointError(str(exc)) from None
    params = {}
    for name, shape in shapes.items():
        raw = fields.get(f"param.{name}")
        if raw is None:
            raise CheckpointError(f"missing parameter {name}")
        try:
            values = np.array([float(v) for v in raw.split(",")], dtype=float)
        except ValueError:
            raise CheckpointError(f"non-numeric value in parameter {name}") from None
        if values.size != int(np.prod(shape)):
            raise CheckpointError(
                f"parameter {name} has {values.size} values, expected {int(np.prod(shape))}"
            )
        params[name] = values.reshape(shape)
    meta = {k[5:]: v for k, v in fields.items() if k.startswith("meta.")}
    try:
        return ScoreModel(arch, input_dim, output_dim, params, hidden, frozen, meta)
    except ValueError as exc:
        raise CheckpointError(str(exc)) from None


def save_model(model: ScoreModel, path) -> None:
    Path(path).write_text(dumps_model(model))


def load_model(path) -> ScoreModel:
    return loads_model(Path(path).read_text())


SYSTEM_FILES = {"client": "client.ckpt", "rejector": "rejector.ckpt", "server": "server.ckpt"}


def save_system(system: HybridSystem, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for role, fname in SYSTEM_FILES.items():
        save_model(getattr(system, role), d / fname)


def load_system(directory) -> HybridSystem:
    d = Path(directory)
    parts = {}
    for role, fname in SYSTEM_FILES.items():
        if not (d / fname).exists():
            raise CheckpointError(f"{d / fname} not found")
        parts[role] = load_model(d / fname)
    return HybridSystem(**parts)

