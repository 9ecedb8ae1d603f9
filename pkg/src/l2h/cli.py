"""Command-line entry point: ``l2h <subcommand> [flags]``.

Any flag may instead come from ``--config FILE``, a flat ``key=value`` file
whose keys are flag names without the leading dashes (``-`` or ``_``).
Explicit flags win over the file.  Exit codes: 0 success, 1 invalid input,
2 a check (oracle, gradient, BRR bound) failed.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import models, oracle
from .core import CostParams, Route, derive_seed
from .deployment import BrrPolicy, brr_infer_batch, calibrate, random_reject_batch
from .harness import experiments as ex
from .harness.data import GaussianMixtureSpec, gen_data, ingest_features, write_features
from .harness.gradcheck import run_gradcheck
from .training import AsyncConfig, SgdConfig, train_async, train_sync

EXIT_OK, EXIT_INVALID, EXIT_CHECK_FAILED = 0, 1, 2


class CheckFailed(Exception):
    pass


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in str(text).split(",") if v.strip())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in str(text).split(",") if v.strip())


def read_config(path) -> dict[str, str]:
    """Parse a flat ``key=value`` file; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


# -- subcommands ------------------------------------------------------------------

def cmd_gen_data(a) -> int:
    spec = GaussianMixtureSpec.ring(a.classes, a.radius, a.dim, variance=a.variance,
                                    n_train=a.n_train, n_cali=a.n_cali, n_test=a.n_test)
    out = Path(a.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, data in zip(("train", "cali", "test"), gen_data(spec, a.seed)):
        write_features(data, out / f"{name}.txt")
        print(f"{name}: {len(data)} rows -> {out / (name + '.txt')}")
    return EXIT_OK


def cmd_train_client(a) -> int:
    data = ingest_features(a.train)
    drop = tuple(k - 1 for k in _ints(a.drop_class)) if a.drop_class else ()
    model = ex.train_client(data, a.arch, ex.Handicap(a.subset, drop), a.lr, a.epochs,
                            a.seed, a.hidden)
    models.save_model(model, a.out)
    acc = float(np.mean(model.predict_batch(data.x) == data.y))
    print(f"client saved to {a.out}; training accuracy {100 * acc:.1f}%")
    return EXIT_OK


def cmd_train(a) -> int:
    data = ingest_features(a.train)
    client = models.load_model(a.client)
    d, K = data.dim, data.num_classes
    server = models.init_model(a.server_arch, d, K, derive_seed(a.seed, "server-init"), a.hidden)
    rejector = models.init_model(a.rejector_arch, d, 2, derive_seed(a.seed, "rejector-init"),
                                 a.hidden)
    system = models.HybridSystem(client, rejector, server)
    costs = CostParams(a.ce, a.c1)
    sgd = SgdConfig(a.lr_server, a.lr_rejector, a.epochs, seed=derive_seed(a.seed, "train-order"))
    if a.algo == "sync":
        system, trace = train_sync(system, data, costs, sgd)
    else:
        system, trace = train_async(system, data, costs, sgd, AsyncConfig(a.sync_interval))
    models.save_system(system, a.out)
    if a.trace:
        trace.write_jsonl(a.trace)
    print(f"system saved to {a.out}; {trace.steps} steps, "
          f"final L_S mean {trace.final_mean(500):.6f}")
    return EXIT_OK


def cmd_evaluate(a) -> int:
    system = models.load_system(a.system)
    test = ingest_features(a.test)
    report = ex.evaluate(system, test, CostParams(a.ce, a.c1))
    print(report.to_table())
    if a.records:
        Path(a.records).write_text(report.to_json() + "\n")
    if a.decisions:
        _write_decisions(system, test, CostParams(a.ce, a.c1), a.decisions)
    return EXIT_OK


def _write_decisions(system, test, costs, path) -> None:
    from .deployment import UsageLedger, ppr_infer

    ledger = UsageLedger()
    for x, y in test:
        ppr_infer(system, x, costs, ledger, y)
    ledger.write_jsonl(path)


def _experiment_config(a) -> ex.ExperimentConfig:
    paths = {}
    if a.data_dir:
        paths = {f"{n}_path": str(Path(a.data_dir) / f"{n}.txt") for n in ("train", "cali", "test")}
    return ex.ExperimentConfig(
        num_classes=a.classes, radius=a.radius, variance=a.variance, dim=a.dim,
        n_train=a.n_train, n_cali=a.n_cali, n_test=a.n_test, **paths,
        client_arch=a.client_arch, client_subset=a.subset,
        client_drop=tuple(k - 1 for k in _ints(a.drop_class)) if a.drop_class else (),
        client_lr=a.client_lr, client_epochs=a.client_epochs,
        server_arch=a.server_arch, rejector_arch=a.rejector_arch, hidden=a.hidden,
        lr_server=a.lr_server, lr_rejector=a.lr_rejector, epochs=a.epochs, algo=a.algo,
        ce_grid=_floats(a.ce_grid), c1_grid=_floats(a.c1_grid), sync_grid=_ints(a.sync_grid),
        q_grid=_floats(a.q_grid) if a.q_grid else (), seed=a.seed)


def cmd_sweep(a) -> int:
    records = ex.sweep(_experiment_config(a))
    print(ex.SweepSummary.from_records(records))
    if a.out:
        ex.write_records(records, a.out)
    return EXIT_OK


def cmd_brr_calibrate(a) -> int:
    system = models.load_system(a.system)
    q1 = calibrate(system, ingest_features(a.cali))
    print(json.dumps({"q1": q1}))
    return EXIT_OK


def cmd_brr_eval(a) -> int:
    system = models.load_system(a.system)
    test = ingest_features(a.test)
    if a.q1 is None:
        if not a.cali:
            raise ValueError("brr-eval needs --q1 or --cali")
        a.q1 = calibrate(system, ingest_features(a.cali))
    policy = BrrPolicy(a.q, a.q1, derive_seed(a.seed, "brr"))
    labels, used = brr_infer_batch(system, test.x, policy, policy.stream())
    realized = float(np.mean(used == int(Route.REMOTE)))
    base, _ = random_reject_batch(system.client, system.server, test.x, realized,
                                  derive_seed(a.seed, "baseline"))
    bound = a.q + 3.0 * np.sqrt(a.q * (1.0 - a.q) / len(test))
    rec = {"q": a.q, "q1": a.q1, "mode": policy.mode, "p": policy.p,
           "expected_rate": policy.expected_rate, "realized_rate": realized,
           "bound": float(bound), "accuracy": float(np.mean(labels == test.y)),
           "baseline_accuracy": float(np.mean(base == test.y))}
    print(json.dumps(rec))
    if realized > bound:
        raise CheckFailed(f"realized remote fraction {realized:.4f} exceeds bound {bound:.4f}")
    return EXIT_OK


def cmd_oracle_check(a) -> int:
    costs = [CostParams(ce, c1) for c1 in _floats(a.c1_grid) for ce in _floats(a.ce_grid)]
    if a.world:
        cases = [oracle.load_world(a.world)]
    else:
        rng = np.random.default_rng(a.seed)
        cases = []
        for _ in range(a.random_worlds):
            w = oracle.random_world(rng, int(rng.integers(1, 21)), int(rng.integers(2, 6)))
            cases.append((w, oracle.random_client(rng, w)))
    failures = 0
    triples = [(w, c, k) for w, c in cases for k in costs]
    for (w, c, k), rep in zip(triples, oracle.consistency_sweep(triples)):
        one = oracle.closed_form_check(w, c, k)
        if not (rep.ok and one.ok):
            failures += 1
            print(f"FAIL c_e={k.c_e} c_1={k.c_1}: closed-form={rep.closed_form_agree} "
                  f"descent={rep.descent_agree} enumeration={one.ok}")
    print(f"{len(triples)} (world, cost) points checked, {failures} failing")
    if failures:
        raise CheckFailed("oracle check failed")
    return EXIT_OK


def cmd_gradcheck(a) -> int:
    results = run_gradcheck(a.configs, a.seed)
    worst = 0.0
    for name, err in results.items():
        print(f"{name:<16} max rel err {err:.3e}")
        worst = max(worst, err)
    if worst >= a.tol:
        raise CheckFailed(f"gradient check failed: {worst:.3e} >= {a.tol:.0e}")
    return EXIT_OK


# -- parser -----------------------------------------------------------------------

def _add_mixture(p) -> None:
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--radius", type=float, default=2.0)
    p.add_argument("--variance", type=float, default=1.0)
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--n-train", type=int, default=6000)
    p.add_argument("--n-cali", type=int, default=1000)
    p.add_argument("--n-test", type=int, default=3000)


def _add_costs(p) -> None:
    p.add_argument("--ce", type=float, default=0.25)
    p.add_argument("--c1", type=float, default=1.0)


def _add_training(p) -> None:
    p.add_argument("--server-arch", choices=models.ARCHITECTURES, default="mlp1")
    p.add_argument("--rejector-arch", choices=models.ARCHITECTURES, default="mlp1")
    p.add_argument("--hidden", type=int, default=models.DEFAULT_HIDDEN)
    p.add_argument("--algo", choices=("sync", "async"), default="sync")
    p.add_argument("--epochs", type=int, default=1)
    p.add_argument("--lr-server", type=float, default=0.05)
    p.add_argument("--lr-rejector", type=float, default=0.05)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="l2h", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="flat key=value file supplying flag defaults")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write synthetic train/cali/test feature files")
    _add_mixture(p)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train-client", help="train and freeze a client classifier")
    p.add_argument("--train", required=True)
    p.add_argument("--arch", choices=models.ARCHITECTURES, default="linear")
    p.add_argument("--hidden", type=int, default=models.DEFAULT_HIDDEN)
    p.add_argument("--subset", type=float, default=1.0)
    p.add_argument("--drop-class", default="", help="1-based labels to withhold, comma list")
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--epochs", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_client)

    p = sub.add_parser("train", help="train server and rejector around a frozen client")
    p.add_argument("--train", required=True)
    p.add_argument("--client", required=True)
    _add_costs(p)
    _add_training(p)
    p.add_argument("--sync-interval", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="directory for the system checkpoint")
    p.add_argument("--trace", help="per-step loss records (jsonl)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="contrastive report of a trained system")
    p.add_argument("--system", required=True)
    p.add_argument("--test", required=True)
    _add_costs(p)
    p.add_argument("--records", help="write the report as one JSON line")
    p.add_argument("--decisions", help="write per-sample routing decisions (jsonl)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="train+evaluate over cost / interval / q grids")
    _add_mixture(p)
    p.add_argument("--data-dir", help="use train/cali/test.txt from here instead of synthetic")
    p.add_argument("--client-arch", choices=models.ARCHITECTURES, default="linear")
    p.add_argument("--subset", type=float, default=1.0)
    p.add_argument("--drop-class", default="")
    p.add_argument("--client-lr", type=float, default=0.05)
    p.add_argument("--client-epochs", type=int, default=1)
    _add_training(p)
    p.add_argument("--ce-grid", default=",".join(str(v) for v in ex.DEFAULT_CE_GRID))
    p.add_argument("--c1-grid", default="1.0")
    p.add_argument("--sync-grid", default="1")
    p.add_argument("--q-grid", default="")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="records output (jsonl)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("brr-calibrate", help="empirical reject rate q1 on a calibration set")
    p.add_argument("--system", required=True)
    p.add_argument("--cali", required=True)
    p.set_defaults(func=cmd_brr_calibrate)

    p = sub.add_parser("brr-eval", help="bounded-reject-rate inference on a test set")
    p.add_argument("--system", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--q", type=float, required=True)
    p.add_argument("--q1", type=float)
    p.add_argument("--cali")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_brr_eval)

    p = sub.add_parser("oracle-check", help="closed-form Bayes and surrogate consistency checks")
    p.add_argument("--world", help="world file; default: random worlds")
    p.add_argument("--random-worlds", type=int, default=100)
    p.add_argument("--ce-grid", default="0,0.1,0.25,0.5,1.0")
    p.add_argument("--c1-grid", default="0,0.5,1.0,1.25,2.0")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_oracle_check)

    p = sub.add_parser("gradcheck", help="analytic vs finite-difference gradients")
    p.add_argument("--configs", type=int, default=100)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def _config_path(argv: list[str]) -> str | None:
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if tok.startswith("--config="):
            return tok.split("=", 1)[1]
    return None


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> argparse.Namespace:
    """Parse ``argv`` after loading ``--config`` values as subcommand defaults."""
    path = _config_path(argv)
    choices = parser._subparsers._group_actions[0].choices
    command = next((tok for tok in argv if tok in choices), None)
    if path and command:
        subparser = choices[command]
        known = {act.dest: act for act in subparser._actions}
        defaults = {}
        for key, raw in read_config(path).items():
            if key not in known:
                raise ValueError(f"unknown config key {key!r} for {command}")
            act = known[key]
            defaults[key] = act.type(raw) if act.type else raw
        subparser.set_defaults(**defaults)
        for act in subparser._actions:  # satisfied by the file, not the command line
            if act.dest in defaults:
                act.required = False
    return parser.parse_args(argv)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        try:
            args = _apply_config(parser, argv)
        except SystemExit as exc:  # argparse usage errors
            return EXIT_INVALID if exc.code else EXIT_OK
        return args.func(args)
    except CheckFailed as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return EXIT_CHECK_FAILED
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
