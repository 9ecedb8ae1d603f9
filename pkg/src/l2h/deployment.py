"""Inference-time runtimes: pay-per-request accounting, intermittent server
availability, and bounded-reject-rate stochastic post-hoc policies."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .core import CostParams, Dataset, Route
from .models import HybridSystem, ScoreModel


@dataclass
class DecisionRecord:
    index: int
    route: Route
    fallback: bool
    label: int
    cost_delta: float

    def to_dict(self) -> dict:
        return {"index": self.index, "route": str(self.route), "fallback_flag": self.fallback,
                "label": self.label + 1, "cost_delta": self.cost_delta}


@dataclass
class UsageLedger:
    total_queries: int = 0
    remote_queries: int = 0
    remote_errors: int = 0
    accumulated_cost: float = 0.0
    records: list[DecisionRecord] = field(default_factory=list)

    @property
    def remote_fraction(self) -> float:
        return self.remote_queries / self.total_queries if self.total_queries else 0.0

    def summary(self) -> dict:
        return {"total_queries": self.total_queries, "remote_queries": self.remote_queries,
                "remote_errors": self.remote_errors,
                "accumulated_cost": self.accumulated_cost}

    def write_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for rec in self.records:
                fh.write(json.dumps(rec.to_dict()) + "\n")


def ppr_infer(system: HybridSystem, x, costs: CostParams, ledger: UsageLedger,
              y: int | None = None) -> tuple[int, UsageLedger]:
    """Route one query and charge the ledger.

    A remote query costs c_e, plus c_1 when ``y`` is known and the server
    is wrong.  Local queries are free.
    """
    route = system.route(x)
    delta = 0.0
    if route == Route.LOCAL:
        label = system.client.predict(x)
    else:
        label = system.server.predict(x)
        ledger.remote_queries += 1
        delta = costs.c_e
        if y is not None and label != y:
            ledger.remote_errors += 1
            delta += costs.c_1
    ledger.accumulated_cost += delta
    ledger.records.append(DecisionRecord(ledger.total_queries, route, False, label, delta))
    ledger.total_queries += 1
    return label, ledger


# -- intermittent availability ---------------------------------------------------

@dataclass(frozen=True)
class AvailabilitySchedule:
    """When the server answers.

    ``always``; ``periodic``: up for the first ``duty * period`` steps of
    every period (0-based steps); ``bernoulli``: up with probability
    ``p_up``, decided per step by a counter-seeded generator.
    """

    kind: str = "always"
    period: int = 1
    duty: float = 1.0
    p_up: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("always", "periodic", "bernoulli"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.period < 1 or not 0.0 <= self.duty <= 1.0 or not 0.0 <= self.p_up <= 1.0:
            raise ValueError("invalid schedule parameters")

    @classmethod
    def always(cls) -> "AvailabilitySchedule":
        return cls("always")

    @classmethod
    def periodic(cls, period: int, duty: float) -> "AvailabilitySchedule":
        return cls("periodic", period=period, duty=duty)

    @classmethod
    def bernoulli(cls, p_up: float, seed: int) -> "AvailabilitySchedule":
        return cls("bernoulli", p_up=p_up, seed=seed)

    def available(self, step: int) -> bool:
        if self.kind == "always":
            return True
        if self.kind == "periodic":
            return (step % self.period) < self.duty * self.period
        u = np.random.default_rng([self.seed, step]).random()
        return bool(u < self.p_up)


def ia_infer(system: HybridSystem, x, schedule: AvailabilitySchedule,
             step: int) -> tuple[int, Route, bool]:
    """Returns (label, rejector's route, fallback flag).

    A remote request while the server is down is answered by the client
    and flagged.
    """
    route = system.route(x)
    if route == Route.LOCAL:
        return system.client.predict(x), route, False
    if not schedule.available(step):
        return system.client.predict(x), route, True
    return system.server.predict(x), route, False


# -- bounded reject rate -----------------------------------------------------------

def calibrate(system: HybridSystem, calibration: Dataset) -> float:
    """Empirical reject rate q1 of the rejector on a held-out set."""
    if len(calibration) == 0:
        raise ValueError("empty calibration set")
    return float(np.mean(system.routes(calibration.x) == int(Route.REMOTE)))


@dataclass(frozen=True)
class BrrPolicy:
    """Post-hoc randomisation that keeps the expected reject rate at most ``q``.

    UNDER (q < q1): rejected inputs still go remote with probability
    p = q / q1.  OVER (q >= q1): accepted inputs are additionally sent
    remote with probability p = (q - q1) / (1 - q1).
    """

    q: float
    q1: float
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.q <= 1.0 and 0.0 <= self.q1 <= 1.0):
            raise ValueError("q and q1 must lie in [0, 1]")

    @property
    def mode(self) -> str:
        return "under" if self.q < self.q1 else "over"

    @property
    def p(self) -> float:
        if self.q < self.q1:
            return self.q / self.q1  # q1 > q >= 0 here
        if self.q1 >= 1.0:
            return 1.0  # q = q1 = 1; limit of (q - q1)/(1 - q1)
        return (self.q - self.q1) / (1.0 - self.q1)

    @property
    def expected_rate(self) -> float:
        """Expected remote fraction if the test reject rate equals q1."""
        if self.mode == "under":
            return self.q1 * self.p
        return self.q1 + (1.0 - self.q1) * self.p

    def stream(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)


def brr_infer(system: HybridSystem, x, policy: BrrPolicy,
              rng: np.random.Generator) -> tuple[int, Route]:
    """Returns (label, route actually used).

    One uniform is drawn per call whatever the branch, so the same stream
    couples decisions across different ``q``.
    """
    u = 1.0 - rng.random()  # uniform on (0, 1]
    remote = _brr_remote(system.route(x) == Route.REMOTE, u, policy)
    if remote:
        return system.server.predict(x), Route.REMOTE
    return system.client.predict(x), Route.LOCAL


def _brr_remote(rejected, u, policy: BrrPolicy):
    if policy.mode == "under":
        return rejected & (u <= policy.p)
    return rejected | (u <= policy.p)


def brr_infer_batch(system: HybridSystem, x: np.ndarray, policy: BrrPolicy,
                    rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised :func:`brr_infer` over rows, consuming the stream in row order."""
    u = 1.0 - rng.random(x.shape[0])
    remote = _brr_remote(system.routes(x) == int(Route.REMOTE), u, policy)
    labels = np.where(remote, system.server.predict_batch(x), system.client.predict_batch(x))
    return labels, np.where(remote, int(Route.REMOTE), int(Route.LOCAL))


def random_reject_baseline(client: ScoreModel, server: ScoreModel, x, q: float,
                           rng: np.random.Generator | int) -> int:
    """Send ``x`` to the server with probability ``q``, ignoring any rejector.

    ``rng`` may be a generator (consumed) or an integer seed.
    """
    rng = np.random.default_rng(rng)
    if rng.random() < q:
        return server.predict(x)
    return client.predict(x)


def random_reject_batch(client: ScoreModel, server: ScoreModel, x: np.ndarray, q: float,
                        rng: np.random.Generator | int) -> tuple[np.ndarray, np.ndarray]:
    remote = np.random.default_rng(rng).random(x.shape[0]) < q
    labels = np.where(remote, server.predict_batch(x), client.predict_batch(x))
    return labels, remote
