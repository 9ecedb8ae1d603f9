"""Client training, contrastive evaluation and grid sweeps.

Seed splitting: every stochastic component draws from
``derive_seed(master, <name>)`` with a fixed name (``"data"``,
``"client-init"``, ``"client-order"``, ``"server-init"``,
``"rejector-init"``, ``"train-order"``, ``"brr"``, ``"baseline"``).  Cost,
interval and ``q`` values never enter a seed, so the data, the client and
the initial server/rejector are the same at every grid point.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from ..core import CostParams, Dataset, Route, derive_seed
from ..deployment import BrrPolicy, brr_infer_batch, calibrate, random_reject_batch
from ..models import DEFAULT_HIDDEN, HybridSystem, ScoreModel, init_model
from ..training import AsyncConfig, SgdConfig, train_async, train_classifier, train_sync
from .data import GaussianMixtureSpec, gen_data, ingest_features

DEFAULT_CE_GRID = tuple(round(0.05 * i, 10) for i in range(11))


# -- client --------------------------------------------------------------------

@dataclass(frozen=True)
class Handicap:
    """How the client's training data is impoverished.

    ``subset`` keeps that fraction of the (remaining) training rows;
    ``drop_classes`` removes every example of the listed 0-based classes.
    """

    subset: float = 1.0
    drop_classes: tuple[int, ...] = ()

    def __post_init__(self):
        if not 0.0 < self.subset <= 1.0:
            raise ValueError("subset fraction must lie in (0, 1]")
        object.__setattr__(self, "drop_classes", tuple(sorted(set(int(k) for k in self.drop_classes))))

    def apply(self, data: Dataset, rng: np.random.Generator) -> Dataset:
        if any(not 0 <= k < data.num_classes for k in self.drop_classes):
            raise ValueError("dropped class outside the label range")
        if len(self.drop_classes) >= data.num_classes:
            raise ValueError("class dropout would remove every class")
        keep = ~np.isin(data.y, self.drop_classes)
        idx = np.flatnonzero(keep)
        if self.subset < 1.0:
            n = max(1, int(round(self.subset * idx.size)))
            idx = np.sort(rng.choice(idx, size=n, replace=False))
        if idx.size == 0:
            raise ValueError("handicap leaves no training data")
        return data.subset(idx)


def train_client(data: Dataset, arch: str = "linear", handicap: Handicap = Handicap(),
                 lr: float = 0.05, epochs: int = 1, seed: int = 0,
                 hidden: int = DEFAULT_HIDDEN) -> ScoreModel:
    """Cross-entropy SGD on the handicapped data; the result is frozen."""
    reduced = handicap.apply(data, np.random.default_rng(derive_seed(seed, "client-subset")))
    model = init_model(arch, data.dim, data.num_classes, derive_seed(seed, "client-init"), hidden)
    model, _ = train_classifier(model, reduced, lr=lr, epochs=epochs,
                                seed=derive_seed(seed, "client-order"))
    model.meta["handicap_subset"] = repr(handicap.subset)
    model.meta["handicap_drop"] = ",".join(str(k + 1) for k in handicap.drop_classes)
    return model.freeze()


# -- evaluation ----------------------------------------------------------------

@dataclass(frozen=True)
class BranchRow:
    """One route's slice of the test set.  Accuracies are ``None`` when empty."""

    route: str
    count: int
    ratio: float
    client_accuracy: float | None
    server_accuracy: float | None

    @property
    def difference(self) -> float | None:
        if self.count == 0:
            return None
        return self.server_accuracy - self.client_accuracy


@dataclass(frozen=True)
class MetricsReport:
    n: int
    joint_accuracy: float
    reject_ratio: float
    client_accuracy: float
    server_accuracy: float
    mean_loss: float
    rows: tuple[BranchRow, BranchRow]  # (local, remote)
    class_reject_rates: tuple[float | None, ...]
    ledger: dict

    def to_record(self) -> dict:
        rec = {k: getattr(self, k) for k in ("n", "joint_accuracy", "reject_ratio",
                                             "client_accuracy", "server_accuracy", "mean_loss")}
        rec["rows"] = [dict(asdict(r), difference=r.difference) for r in self.rows]
        rec["class_reject_rates"] = list(self.class_reject_rates)
        rec["ledger"] = dict(self.ledger)
        return rec

    def to_json(self) -> str:
        return json.dumps(self.to_record(), sort_keys=True)

    def to_table(self) -> str:
        """Contrastive table in percent, one decimal."""
        def pct(v):
            return "N/A" if v is None else f"{100 * v:.1f}"

        lines = [f"{'route':<8}{'ratio':>8}{'m acc':>8}{'e acc':>8}{'diff':>8}"]
        for r in self.rows:
            lines.append(f"{r.route:<8}{pct(r.ratio):>8}{pct(r.client_accuracy):>8}"
                         f"{pct(r.server_accuracy):>8}{pct(r.difference):>8}")
        lines.append(f"joint accuracy {pct(self.joint_accuracy)}  "
                     f"client only {pct(self.client_accuracy)}  "
                     f"server only {pct(self.server_accuracy)}")
        lines.append(f"reject ratio {pct(self.reject_ratio)}  mean loss {self.mean_loss:.6f}  "
                     f"cost {self.ledger['accumulated_cost']:.6f}")
        return "\n".join(lines)


def _branch(name: str, mask: np.ndarray, m_ok: np.ndarray, e_ok: np.ndarray) -> BranchRow:
    n = int(mask.sum())
    if n == 0:
        return BranchRow(name, 0, 0.0, None, None)
    return BranchRow(name, n, n / mask.size, float(m_ok[mask].mean()), float(e_ok[mask].mean()))


def evaluate(system: HybridSystem, test: Dataset, costs: CostParams) -> MetricsReport:
    """Joint accuracy, the per-route contrastive table and the PPR ledger summary."""
    if test.num_classes != system.num_classes:
        raise ValueError("test set and system disagree on the number of classes")
    routes = system.routes(test.x)
    remote = routes == int(Route.REMOTE)
    m_ok = system.client.predict_batch(test.x) == test.y
    e_ok = system.server.predict_batch(test.x) == test.y
    joint_ok = np.where(remote, e_ok, m_ok)
    remote_errors = int((remote & ~e_ok).sum())
    loss = np.where(remote, costs.c_e + costs.c_1 * ~e_ok, (~m_ok).astype(float))
    per_class = []
    for k in range(test.num_classes):
        sel = test.y == k
        per_class.append(float(remote[sel].mean()) if sel.any() else None)
    n_remote = int(remote.sum())
    ledger = {"total_queries": len(test), "remote_queries": n_remote,
              "remote_errors": remote_errors,
              "accumulated_cost": costs.c_e * n_remote + costs.c_1 * remote_errors}
    local_row = _branch(str(Route.LOCAL), ~remote, m_ok, e_ok)
    remote_row = _branch(str(Route.REMOTE), remote, m_ok, e_ok)
    return MetricsReport(
        n=len(test),
        joint_accuracy=float(joint_ok.mean()),
        reject_ratio=n_remote / len(test),
        client_accuracy=float(m_ok.mean()),
        server_accuracy=float(e_ok.mean()),
        mean_loss=float(loss.mean()),
        rows=(local_row, remote_row),
        class_reject_rates=tuple(per_class),
        ledger=ledger,
    )


# -- experiments -----------------------------------------------------------------

@dataclass
class ExperimentConfig:
    """Everything one run or sweep needs.

    Data comes from the synthetic ring mixture unless all three feature-file
    paths are given.  Grids are tuples; a single run uses their first entry.
    """

    # data
    num_classes: int = 3
    radius: float = 2.0
    variance: float = 1.0
    dim: int = 2
    n_train: int = 6000
    n_cali: int = 1000
    n_test: int = 3000
    train_path: str | None = None
    cali_path: str | None = None
    test_path: str | None = None
    # client
    client_arch: str = "linear"
    client_subset: float = 1.0
    client_drop: tuple[int, ...] = ()
    client_lr: float = 0.05
    client_epochs: int = 1
    # server and rejector
    server_arch: str = "mlp1"
    rejector_arch: str = "mlp1"
    hidden: int = DEFAULT_HIDDEN
    lr_server: float = 0.05
    lr_rejector: float = 0.05
    epochs: int = 1
    algo: str = "sync"
    # grids
    ce_grid: tuple[float, ...] = DEFAULT_CE_GRID
    c1_grid: tuple[float, ...] = (1.0,)
    sync_grid: tuple[int, ...] = (1,)
    q_grid: tuple[float, ...] = ()
    seed: int = 0

    def __post_init__(self):
        if self.algo not in ("sync", "async"):
            raise ValueError("algo must be 'sync' or 'async'")
        for name in ("ce_grid", "c1_grid", "sync_grid"):
            value = tuple(getattr(self, name))
            if not value:
                raise ValueError(f"{name} must not be empty")
            setattr(self, name, value)
        self.q_grid = tuple(self.q_grid)
        self.client_drop = tuple(self.client_drop)
        paths = (self.train_path, self.cali_path, self.test_path)
        if any(paths) and not all(paths):
            raise ValueError("give all of train_path, cali_path and test_path, or none")

    @property
    def mixture(self) -> GaussianMixtureSpec:
        return GaussianMixtureSpec.ring(self.num_classes, self.radius, self.dim,
                                        variance=self.variance, n_train=self.n_train,
                                        n_cali=self.n_cali, n_test=self.n_test)

    @property
    def sgd(self) -> SgdConfig:
        return SgdConfig(self.lr_server, self.lr_rejector, self.epochs,
                         seed=derive_seed(self.seed, "train-order"))

    @property
    def handicap(self) -> Handicap:
        return Handicap(self.client_subset, self.client_drop)


def load_data(cfg: ExperimentConfig) -> tuple[Dataset, Dataset, Dataset]:
    if cfg.train_path:
        return (ingest_features(cfg.train_path), ingest_features(cfg.cali_path),
                ingest_features(cfg.test_path))
    return gen_data(cfg.mixture, derive_seed(cfg.seed, "data"))


def fresh_system(cfg: ExperimentConfig, client: ScoreModel) -> HybridSystem:
    """Client plus untrained server and rejector; independent of costs."""
    d, K = client.input_dim, client.output_dim
    server = init_model(cfg.server_arch, d, K, derive_seed(cfg.seed, "server-init"), cfg.hidden)
    rejector = init_model(cfg.rejector_arch, d, 2, derive_seed(cfg.seed, "rejector-init"),
                          cfg.hidden)
    return HybridSystem(client, rejector, server)


@dataclass
class Setup:
    """Data and client shared by every grid point of a sweep."""

    train: Dataset
    cali: Dataset
    test: Dataset
    client: ScoreModel


def prepare(cfg: ExperimentConfig) -> Setup:
    train, cali, test = load_data(cfg)
    client = train_client(train, cfg.client_arch, cfg.handicap, cfg.client_lr,
                          cfg.client_epochs, cfg.seed, cfg.hidden)
    return Setup(train, cali, test, client)


def train_point(cfg: ExperimentConfig, setup: Setup, costs: CostParams,
                sync_interval: int | None = None):
    """Train server and rejector at one grid point; returns (system, trace)."""
    system = fresh_system(cfg, setup.client)
    if sync_interval is None:
        return train_sync(system, setup.train, costs, cfg.sgd)
    return train_async(system, setup.train, costs, cfg.sgd, AsyncConfig(sync_interval))


def brr_study(system: HybridSystem, setup: Setup, q_grid, seed: int) -> list[dict]:
    """BRR policy vs. the random-reject baseline at the realized budget."""
    q1 = calibrate(system, setup.cali)
    x, y = setup.test.x, setup.test.y
    out = []
    for q in q_grid:
        policy = BrrPolicy(q, q1, derive_seed(seed, "brr"))
        labels, used = brr_infer_batch(system, x, policy, policy.stream())
        realized = float(np.mean(used == int(Route.REMOTE)))
        base_labels, _ = random_reject_batch(system.client, system.server, x, realized,
                                             derive_seed(seed, "baseline"))
        out.append({"q": q, "q1": q1, "mode": policy.mode, "p": policy.p,
                    "expected_rate": policy.expected_rate, "realized_rate": realized,
                    "bound": q + 3.0 * np.sqrt(q * (1.0 - q) / len(y)),
                    "accuracy": float(np.mean(labels == y)),
                    "baseline_accuracy": float(np.mean(base_labels == y))})
    return out


def sweep(cfg: ExperimentConfig, setup: Setup | None = None) -> list[dict]:
    """Train and evaluate at every (c_e, c_1, S) point, in grid order.

    ``algo == "sync"`` ignores ``sync_grid``.  When ``q_grid`` is set, each
    point also carries the BRR study of its trained system.
    """
    setup = setup or prepare(cfg)
    intervals = (None,) if cfg.algo == "sync" else cfg.sync_grid
    records = []
    for c_1, c_e, S in itertools.product(cfg.c1_grid, cfg.ce_grid, intervals):
        costs = CostParams(c_e, c_1)
        system, trace = train_point(cfg, setup, costs, S)
        report = evaluate(system, setup.test, costs)
        rec = {"seed": cfg.seed, "c_e": c_e, "c_1": c_1, "algo": cfg.algo,
               "sync_interval": S, "final_l_s": trace.final_mean(500),
               "report": report.to_record()}
        if cfg.q_grid:
            rec["brr"] = brr_study(system, setup, cfg.q_grid, cfg.seed)
        records.append(rec)
    return records


def write_records(records, path) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def curves(records) -> dict:
    """Reject-rate-vs-c_e and accuracy-vs-reject-rate series keyed by c_1."""
    out: dict = {}
    for rec in records:
        series = out.setdefault(rec["c_1"], {"c_e": [], "reject_rate": [], "accuracy": []})
        series["c_e"].append(rec["c_e"])
        series["reject_rate"].append(rec["report"]["reject_ratio"])
        series["accuracy"].append(rec["report"]["joint_accuracy"])
    return out


@dataclass
class SweepSummary:
    """Convenience view used by the CLI: one line per grid point."""

    lines: list[str] = field(default_factory=list)

    @classmethod
    def from_records(cls, records) -> "SweepSummary":
        lines = [f"{'c_1':>6}{'c_e':>8}{'S':>6}{'reject%':>9}{'joint%':>8}{'client%':>9}"]
        for r in records:
            rep = r["report"]
            s = "-" if r["sync_interval"] is None else str(r["sync_interval"])
            lines.append(f"{r['c_1']:>6g}{r['c_e']:>8g}{s:>6}{100 * rep['reject_ratio']:>9.1f}"
                         f"{100 * rep['joint_accuracy']:>8.1f}{100 * rep['client_accuracy']:>9.1f}")
        return cls(lines)

    def __str__(self) -> str:
        return "\n".join(self.lines)
