"""Exact Bayes machinery on finite ("discrete") worlds.

A world is a finite support with a prior and the class posteriors
``eta[s, i] = P(Y = i | X = x_s)``.  Everything here is computed exactly
(up to floating point), which makes it usable as ground truth for the
learned components.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import CostParams, Route, generalized_loss

BOUNDARY_TOL = 1e-9
GD_STEPS = 2000
GD_LR = 0.1

_ROW_TOL = 1e-12


class WorldFormatError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class DiscreteWorld:
    support: np.ndarray  # (S, l)
    prior: np.ndarray  # (S,)
    eta: np.ndarray  # (S, K)

    def __post_init__(self):
        support = np.atleast_2d(np.asarray(self.support, dtype=float))
        prior = np.asarray(self.prior, dtype=float)
        eta = np.asarray(self.eta, dtype=float)
        S = support.shape[0]
        if prior.shape != (S,) or eta.ndim != 2 or eta.shape[0] != S:
            raise ValueError("support, prior and eta disagree on the number of points")
        if np.any(prior < 0) or abs(prior.sum() - 1.0) > _ROW_TOL:
            raise ValueError("prior must be non-negative and sum to 1")
        if np.any(eta < 0) or np.any(np.abs(eta.sum(axis=1) - 1.0) > _ROW_TOL):
            raise ValueError("every eta row must be a probability vector")
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "prior", prior)
        object.__setattr__(self, "eta", eta)

    @property
    def num_points(self) -> int:
        return self.eta.shape[0]

    @property
    def num_classes(self) -> int:
        return self.eta.shape[1]


@dataclass(frozen=True, eq=False)
class ClientBehavior:
    """Either fixed predicted labels per point, or a distribution over labels.

    Exactly one of ``labels`` (shape ``(S,)``) and ``probs`` (shape
    ``(S, K)``, rows summing to one) is set.
    """

    labels: np.ndarray | None = None
    probs: np.ndarray | None = None

    def __post_init__(self):
        if (self.labels is None) == (self.probs is None):
            raise ValueError("give exactly one of labels (deterministic) or probs (stochastic)")
        if self.labels is not None:
            object.__setattr__(self, "labels", np.asarray(self.labels, dtype=np.int64))
        else:
            p = np.asarray(self.probs, dtype=float)
            if p.ndim != 2 or np.any(p < 0) or np.any(np.abs(p.sum(axis=1) - 1.0) > _ROW_TOL):
                raise ValueError("stochastic client rows must be probability vectors")
            object.__setattr__(self, "probs", p)

    @classmethod
    def deterministic(cls, labels) -> "ClientBehavior":
        return cls(labels=labels)

    @classmethod
    def stochastic(cls, probs) -> "ClientBehavior":
        return cls(probs=probs)

    @property
    def is_deterministic(self) -> bool:
        return self.labels is not None

    def label_distribution(self, num_classes: int) -> np.ndarray:
        """P(M = i | x_s) as an (S, K) matrix."""
        if self.probs is not None:
            return self.probs
        out = np.zeros((self.labels.size, num_classes))
        out[np.arange(self.labels.size), self.labels] = 1.0
        return out

    def correct_prob(self, world: DiscreteWorld) -> np.ndarray:
        """P(M = Y | x_s); for deterministic clients this is eta[s, j*(s)]."""
        self._check(world)
        if self.labels is not None:
            return world.eta[np.arange(world.num_points), self.labels]
        return np.sum(world.eta * self.probs, axis=1)

    def _check(self, world: DiscreteWorld) -> None:
        S, K = world.eta.shape
        if self.labels is not None:
            if self.labels.shape != (S,) or self.labels.min() < 0 or self.labels.max() >= K:
                raise ValueError("client labels do not fit the world")
        elif self.probs.shape != (S, K):
            raise ValueError("client probabilities do not fit the world")


# -- Bayes classifiers --------------------------------------------------------

def bayes_server(world: DiscreteWorld) -> np.ndarray:
    return np.argmax(world.eta, axis=1)


def bayes_threshold(world: DiscreteWorld, costs: CostParams) -> np.ndarray:
    """(1 - c_e - c_1) + c_1 * max_i eta_i, per support point."""
    return costs.threshold_offset + costs.c_1 * world.eta.max(axis=1)


def bayes_rejector(world: DiscreteWorld, client: ClientBehavior,
                   costs: CostParams) -> np.ndarray:
    """+1 (LOCAL) where eta at the client's label beats the threshold, else -1."""
    if not client.is_deterministic:
        raise ValueError(
            "bayes_rejector needs a deterministic client; use posterior_enumeration "
            "or bayes_rejector_general for stochastic clients"
        )
    local = client.correct_prob(world) > bayes_threshold(world, costs)
    return np.where(local, int(Route.LOCAL), int(Route.REMOTE))


def bayes_rejector_general(world: DiscreteWorld, client: ClientBehavior,
                           costs: CostParams) -> np.ndarray:
    """Rejector in the form P(M != Y | x) < c_e + c_1 (1 - max eta).

    Valid for stochastic clients too.
    """
    miss = 1.0 - client.correct_prob(world)
    remote = costs.c_e + costs.c_1 * (1.0 - world.eta.max(axis=1))
    return np.where(miss < remote, int(Route.LOCAL), int(Route.REMOTE))


# -- posterior-risk enumeration (independent oracle) ----------------------------

@dataclass(frozen=True)
class PosteriorRow:
    """Posterior risks of all 2K (route, server label) decisions at one point."""

    local_risk: float
    remote_risks: np.ndarray
    route: Route
    server_label: int

    @property
    def bayes_risk(self) -> float:
        return min(self.local_risk, float(self.remote_risks.min()))


def posterior_enumeration(world: DiscreteWorld, client: ClientBehavior,
                          costs: CostParams, point_index: int) -> PosteriorRow:
    """Brute-force the decision with minimal posterior risk at one point.

    Risks are accumulated directly from ``generalized_loss`` over the joint
    law of (Y, M) given x, with no closed-form shortcut.  Decisions are
    scanned remote-first in label order and only a strictly smaller risk
    replaces the incumbent, so ties go REMOTE and to the lowest label.
    """
    K = world.num_classes
    eta = world.eta[point_index]
    m_dist = client.label_distribution(K)[point_index]

    def risk(route: Route, e_label: int) -> float:
        total = 0.0
        for y in range(K):
            if eta[y] == 0.0:
                continue
            for m in range(K):
                if m_dist[m] == 0.0:
                    continue
                total += eta[y] * m_dist[m] * generalized_loss(route, m, e_label, y, costs)
        return total

    remote = np.array([risk(Route.REMOTE, e) for e in range(K)])
    local = risk(Route.LOCAL, 0)
    best, best_route = math.inf, Route.REMOTE
    for route, e in itertools.chain(((Route.REMOTE, e) for e in range(K)),
                                    ((Route.LOCAL, e) for e in range(K))):
        r = remote[e] if route == Route.REMOTE else local
        if r < best:
            best, best_route = r, route
    server_label = int(np.argmin(remote))
    return PosteriorRow(local, remote, best_route, server_label)


def exact_risk(world: DiscreteWorld, client: ClientBehavior, rejector_map,
               server_map, costs: CostParams) -> float:
    """Expected generalized 0-1 loss of the maps (one route/label per point)."""
    S, K = world.eta.shape
    routes = np.asarray(rejector_map)
    server = np.asarray(server_map)
    if routes.shape != (S,) or server.shape != (S,):
        raise ValueError("maps must hold one entry per support point")
    m_dist = client.label_distribution(K)
    labels = np.arange(K)
    # loss[s, y, m] for the decisions at each point
    local_loss = (labels[None, :, None] != labels[None, None, :]).astype(float)
    local_loss = np.broadcast_to(local_loss, (S, K, K))
    remote_loss = costs.c_e + costs.c_1 * (server[:, None] != labels[None, :]).astype(float)
    remote_loss = np.broadcast_to(remote_loss[:, :, None], (S, K, K))
    is_local = (routes == int(Route.LOCAL))[:, None, None]
    loss = np.where(is_local, local_loss, remote_loss)
    joint = world.eta[:, :, None] * m_dist[:, None, :]
    return float(np.sum(world.prior * np.sum(joint * loss, axis=(1, 2))))


# -- surrogate minimizer ---------------------------------------------------

@dataclass(frozen=True)
class SurrogateMinimizer:
    """Pointwise minimizer of E[L2 | x] with the server at its L1 optimum.

    ``ratio`` is exp(r1*) / exp(r2*).  When the threshold is <= 0 the
    conditional risk has no finite minimizer: r1 - r2 diverges to +inf,
    reported as ``ratio = inf`` with ``divergent`` set.
    """

    ratio: float
    route: Route
    divergent: bool = False


def surrogate_pointwise_minimizer(world: DiscreteWorld, client: ClientBehavior,
                                  costs: CostParams, point_index: int) -> SurrogateMinimizer:
    thr = float(bayes_threshold(world, costs)[point_index])
    p_correct = float(client.correct_prob(world)[point_index])
    if thr > 0.0:
        ratio = p_correct / thr
        return SurrogateMinimizer(ratio, Route.LOCAL if ratio > 1.0 else Route.REMOTE)
    if p_correct > 0.0:
        return SurrogateMinimizer(math.inf, Route.LOCAL, divergent=True)
    # threshold 0 and client never right: E[L2|x] is identically 0
    return SurrogateMinimizer(math.nan, Route.REMOTE, divergent=False)


@dataclass(frozen=True)
class DescentResult:
    r1: np.ndarray
    r2: np.ndarray
    grad_norm: np.ndarray
    divergent: np.ndarray

    @property
    def routes(self) -> np.ndarray:
        return np.where(self.r1 > self.r2, int(Route.LOCAL), int(Route.REMOTE))


def minimize_conditional_l2(remote_weight, local_weight, steps: int = GD_STEPS,
                            lr: float = GD_LR) -> DescentResult:
    """Plain gradient descent on ``A softplus(r1 - r2) + B softplus(r2 - r1)``.

    Vectorised over points; starts at r1 = r2 = 0.  A point is flagged
    divergent when its gradient has not vanished and r1 - r2 grew on every
    step (the A <= 0 regime).
    """
    A = np.asarray(remote_weight, dtype=float)
    B = np.asarray(local_weight, dtype=float)
    r1 = np.zeros(np.broadcast(A, B).shape)
    r2 = np.zeros_like(r1)
    monotone = np.ones(r1.shape, dtype=bool)
    prev = r1 - r2
    g1 = np.zeros_like(r1)
    for _ in range(steps):
        s = 0.5 * (1.0 + np.tanh(0.5 * (r1 - r2)))  # logistic sigmoid, overflow-free
        g1 = A * s - B * (1.0 - s)
        r1 = r1 - lr * g1
        r2 = r2 + lr * g1
        d = r1 - r2
        monotone &= d > prev
        prev = d
    grad_norm = np.sqrt(2.0) * np.abs(g1)
    return DescentResult(r1, r2, grad_norm, monotone & (grad_norm > 1e-3))


# -- consistency -------------------------------------------------------------

@dataclass
class ConsistencyReport:
    bayes_routes: np.ndarray
    closed_form_routes: np.ndarray
    descent_routes: np.ndarray
    boundary: np.ndarray  # points within BOUNDARY_TOL of the Bayes threshold
    costs: CostParams | None = None

    @property
    def closed_form_agree(self) -> bool:
        off = ~self.boundary
        return bool(np.all(self.closed_form_routes[off] == self.bayes_routes[off]))

    @property
    def descent_agree(self) -> bool:
        off = ~self.boundary
        return bool(np.all(self.descent_routes[off] == self.bayes_routes[off]))

    @property
    def ok(self) -> bool:
        return self.closed_form_agree and self.descent_agree

    @property
    def num_boundary(self) -> int:
        return int(self.boundary.sum())


def consistency_check(world: DiscreteWorld, client: ClientBehavior,
                      costs: CostParams) -> ConsistencyReport:
    """Compare the surrogate's pointwise minimizer with the Bayes rejector."""
    return consistency_sweep([(world, client, costs)])[0]


def consistency_sweep(cases) -> list[ConsistencyReport]:
    """:func:`consistency_check` for many (world, client, costs) triples.

    The numeric descent runs once over the concatenated support points of
    all cases; results are identical to checking each case on its own.
    """
    cases = list(cases)
    thresholds, corrects = [], []
    for world, client, costs in cases:
        thresholds.append(bayes_threshold(world, costs))
        corrects.append(client.correct_prob(world))
    if not cases:
        return []
    descent = minimize_conditional_l2(np.concatenate(thresholds), np.concatenate(corrects))
    reports, pos = [], 0
    for (world, client, costs), thr, p_correct in zip(cases, thresholds, corrects):
        S = world.num_points
        if client.is_deterministic:
            bayes = bayes_rejector(world, client, costs)
        else:
            bayes = bayes_rejector_general(world, client, costs)
        closed = np.array([int(surrogate_pointwise_minimizer(world, client, costs, s).route)
                           for s in range(S)])
        reports.append(ConsistencyReport(
            bayes_routes=bayes,
            closed_form_routes=closed,
            descent_routes=descent.routes[pos:pos + S],
            boundary=np.abs(p_correct - thr) <= BOUNDARY_TOL,
            costs=costs,
        ))
        pos += S
    return reports


@dataclass
class ClosedFormReport:
    route_mismatches: int = 0
    label_mismatches: int = 0
    points: int = 0
    details: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.route_mismatches == 0 and self.label_mismatches == 0


def closed_form_check(world: DiscreteWorld, client: ClientBehavior,
                      costs: CostParams) -> ClosedFormReport:
    """Closed-form Bayes maps vs. the posterior-risk enumeration, point by point.

    The server label is compared exactly when c_1 > 0.  With c_1 = 0 every
    server label has the same posterior risk, so the closed-form label is
    only required to attain the enumerated minimum.
    """
    report = ClosedFormReport()
    if client.is_deterministic:
        routes = bayes_rejector(world, client, costs)
    else:
        routes = bayes_rejector_general(world, client, costs)
    labels = bayes_server(world)
    for s in range(world.num_points):
        row = posterior_enumeration(world, client, costs, s)
        report.points += 1
        if int(row.route) != routes[s]:
            report.route_mismatches += 1
            report.details.append(("route", s, int(row.route), int(routes[s])))
        if costs.c_1 > 0:
            label_ok = row.server_label == labels[s]
        else:
            label_ok = row.remote_risks[labels[s]] == row.remote_risks.min()
        if not label_ok:
            report.label_mismatches += 1
            report.details.append(("label", s, row.server_label, int(labels[s])))
    return report


# -- generators and files ----------------------------------------------------

def random_world(rng: np.random.Generator, num_points: int, num_classes: int,
                 dim: int = 2, concentration: float = 1.0) -> DiscreteWorld:
    """Random support, Dirichlet prior and Dirichlet posteriors."""
    support = rng.normal(size=(num_points, dim))
    prior = rng.dirichlet(np.ones(num_points))
    eta = rng.dirichlet(np.full(num_classes, concentration), size=num_points)
    return DiscreteWorld(support, prior, eta)


def random_client(rng: np.random.Generator, world: DiscreteWorld,
                  stochastic: bool = False) -> ClientBehavior:
    S, K = world.eta.shape
    if stochastic:
        return ClientBehavior.stochastic(rng.dirichlet(np.ones(K), size=S))
    return ClientBehavior.deterministic(rng.integers(0, K, size=S))


def dumps_world(world: DiscreteWorld, client: ClientBehavior) -> str:
    f = lambda v: format(float(v), ".17g")  # noqa: E731
    S, K = world.eta.shape
    lines = [f"S={S} K={K} L={world.support.shape[1]}", "[support]"]
    lines += [",".join(f(v) for v in row) for row in world.support]
    lines += ["[prior]", ",".join(f(v) for v in world.prior), "[eta]"]
    lines += [",".join(f(v) for v in row) for row in world.eta]
    if client.is_deterministic:
        lines += ["[client deterministic]", ",".join(str(int(v) + 1) for v in client.labels)]
    else:
        lines += ["[client stochastic]"]
        lines += [",".join(f(v) for v in row) for row in client.probs]
    return "\n".join(lines) + "\n"


def loads_world(text: str) -> tuple[DiscreteWorld, ClientBehavior]:
    """Parse the world format written by :func:`dumps_world`.

    Client labels are 1-based in the file.
    """
    lines = [ln.strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    if not lines:
        raise WorldFormatError("empty world file")
    try:
        header = dict(tok.split("=") for tok in lines[0].split())
        S, K, L = int(header["S"]), int(header["K"]), int(header["L"])
    except (ValueError, KeyError):
        raise WorldFormatError("first line must be 'S=<int> K=<int> L=<int>'") from None
    sections: dict[str, list[str]] = {}
    current = None
    for ln in lines[1:]:
        if ln.startswith("[") and ln.endswith("]"):
            current = ln[1:-1].strip()
            sections[current] = []
        elif current is None:
            raise WorldFormatError(f"data outside a section: {ln!r}")
        else:
            sections[current].append(ln)

    def matrix(name, rows, cols):
        if name not in sections:
            raise WorldFormatError(f"missing section [{name}]")
        try:
            arr = np.array([[float(v) for v in r.split(",")] for r in sections[name]])
        except ValueError:
            raise WorldFormatError(f"non-numeric entry in [{name}]") from None
        if arr.shape != (rows, cols):
            raise WorldFormatError(f"[{name}] has shape {arr.shape}, expected {(rows, cols)}")
        return arr

    try:
        world = DiscreteWorld(matrix("support", S, L), matrix("prior", 1, S)[0],
                              matrix("eta", S, K))
        if "client deterministic" in sections:
            labels = matrix("client deterministic", 1, S)[0]
            if np.any(labels != np.round(labels)) or labels.min() < 1 or labels.max() > K:
                raise WorldFormatError("client labels must be integers in 1..K")
            client = ClientBehavior.deterministic(labels.astype(np.int64) - 1)
        elif "client stochastic" in sections:
            client = ClientBehavior.stochastic(matrix("client stochastic", S, K))
        else:
            raise WorldFormatError("missing [client deterministic] or [client stochastic]")
    except WorldFormatError:
        raise
    except ValueError as exc:
        raise WorldFormatError(str(exc)) from None
    return world, client


def save_world(world: DiscreteWorld, client: ClientBehavior, path) -> None:
    Path(path).write_text(dumps_world(world, client))


def load_world(path) -> tuple[DiscreteWorld, ClientBehavior]:
    return loads_world(Path(path).read_text())
