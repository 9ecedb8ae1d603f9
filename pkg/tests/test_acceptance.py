"""The nine acceptance criteria, each at its stated tolerance and time budget.

Every test logs one line through ``acceptance_log``; the lines are printed
in the terminal summary as ``criterion N: PASS|FAIL <detail>``.

Shared synthetic setup (criteria 5 to 9): 3-class ring mixture (radius 2,
unit variance, l = 2) with a 6000/1000/3000 split; the LINEAR client never
sees class 3 (3 passes of SGD); MLP1 server and rejector trained for one
pass with learning rates 0.05.
"""

import json
import math
import time

import numpy as np
import pytest

from l2h import oracle
from l2h.core import CostParams, Route
from l2h.deployment import BrrPolicy, brr_infer_batch, calibrate, random_reject_batch
from l2h.harness import experiments as ex
from l2h.harness.gradcheck import run_gradcheck
from l2h.losses import L2Weights, chord_gap, l2_loss, l2_surface
from l2h.models import load_system, save_system
from l2h.core import derive_seed

SEEDS = range(5)
CE_GRID = (0.0, 0.1, 0.25, 0.5, 1.0)
C1_GRID = (0.0, 0.5, 1.0, 1.25, 2.0)
DROPPED = 2  # 0-based; "class 3" in user-facing terms


def config(seed, **kw):
    base = dict(client_drop=(DROPPED,), client_epochs=3, seed=seed)
    base.update(kw)
    return ex.ExperimentConfig(**base)


def random_cases(seed=0, count=100):
    rng = np.random.default_rng(seed)
    cases = []
    for _ in range(count):
        w = oracle.random_world(rng, int(rng.integers(1, 21)), int(rng.integers(2, 6)))
        cases.append((w, oracle.random_client(rng, w)))
    return cases


def report(log, number, ok, detail):
    log.append((number, bool(ok), detail))
    assert ok, detail


@pytest.fixture(scope="module")
def setups():
    return {seed: ex.prepare(config(seed)) for seed in SEEDS}


def test_criterion_1_closed_form_rule(acceptance_log):
    start = time.perf_counter()
    cases = random_cases()
    route_bad = label_bad = points = 0
    for w, c in cases:
        for ce in CE_GRID:
            for c1 in C1_GRID:
                rep = oracle.closed_form_check(w, c, CostParams(ce, c1))
                route_bad += rep.route_mismatches
                label_bad += rep.label_mismatches
                points += rep.points
    elapsed = time.perf_counter() - start
    ok = route_bad == 0 and label_bad == 0 and elapsed < 5.0
    report(acceptance_log, 1, ok, f"{points} points, {route_bad} route / {label_bad} label "
           f"mismatches, {elapsed:.2f}s (limit 5s)")


def test_criterion_2_surrogate_consistency(acceptance_log):
    start = time.perf_counter()
    triples = [(w, c, CostParams(ce, c1)) for w, c in random_cases()
               for ce in CE_GRID for c1 in C1_GRID]
    reports = oracle.consistency_sweep(triples)
    closed_bad = sum(not r.closed_form_agree for r in reports)
    descent_bad = sum(not r.descent_agree for r in reports)
    boundary = sum(r.num_boundary for r in reports)
    points = sum(r.boundary.size for r in reports)
    elapsed = time.perf_counter() - start
    ok = closed_bad == 0 and descent_bad == 0 and elapsed < 60.0
    report(acceptance_log, 2, ok, f"{points} points ({boundary} on the boundary), "
           f"{closed_bad} closed-form / {descent_bad} descent disagreements, "
           f"{elapsed:.2f}s (limit 60s)")


def test_criterion_3_gradients(acceptance_log):
    start = time.perf_counter()
    errors = run_gradcheck(configs=100, seed=0)
    elapsed = time.perf_counter() - start
    worst = max(errors.values())
    ok = worst < 1e-4 and elapsed < 5.0
    report(acceptance_log, 3, ok, f"worst relative error {worst:.2e} over "
           f"{len(errors)} cases x 100 configs, {elapsed:.2f}s (limit 5s)")


def test_criterion_4_convexity_and_monotonicity(acceptance_log):
    start = time.perf_counter()
    rng = np.random.default_rng(4)
    worst_gap = math.inf
    for _ in range(1000):
        w = L2Weights(float(rng.uniform(1e-6, 3.0)), float(rng.integers(0, 2)))
        u, v = rng.normal(scale=10.0, size=2), rng.normal(scale=10.0, size=2)
        worst_gap = min(worst_gap, chord_gap(l2_surface(w), u, v))
    mono_bad = 0
    for _ in range(1000):
        w = L2Weights(float(rng.uniform(-2.0, 0.0)), float(rng.integers(0, 2)))
        r1, r2 = rng.normal(scale=10.0, size=2)
        delta = float(rng.exponential(2.0))
        base = l2_loss(r1, r2, w)
        if l2_loss(r1 + delta, r2, w) > base or l2_loss(r1, r2 + delta, w) < base:
            mono_bad += 1
    elapsed = time.perf_counter() - start
    ok = worst_gap >= -1e-12 and mono_bad == 0 and elapsed < 1.0
    report(acceptance_log, 4, ok, f"min chord gap {worst_gap:.3e}, {mono_bad} monotonicity "
           f"violations, {elapsed:.2f}s (limit 1s)")


def test_criterion_5_end_to_end_trends(acceptance_log, setups):
    start = time.perf_counter()
    grid = ex.DEFAULT_CE_GRID
    seeds_a, seeds_b, probe = 0, 0, []
    rates_by_seed = {}
    for seed in SEEDS:
        cfg = config(seed)
        rates, dominated = [], True
        for ce in grid:
            costs = CostParams(ce, 1.0)
            system, _ = ex.train_point(cfg, setups[seed], costs)
            rep = ex.evaluate(system, setups[seed].test, costs)
            rates.append(rep.reject_ratio)
            dominated &= rep.joint_accuracy >= rep.client_accuracy
        system, _ = ex.train_point(cfg, setups[seed], CostParams(1.0, 1.0))
        probe.append(ex.evaluate(system, setups[seed].test, CostParams(1.0, 1.0)).reject_ratio)
        inversions = sum(b > a for a, b in zip(rates, rates[1:]))
        seeds_a += dominated
        seeds_b += inversions <= 1
        rates_by_seed[seed] = rates
    elapsed = time.perf_counter() - start
    ok_a = seeds_a >= 4
    ok_b = seeds_b == len(SEEDS)
    ok_c = all(r < 0.02 for r in probe)
    ok = ok_a and ok_b and ok_c and elapsed < 120.0
    report(acceptance_log, 5, ok,
           f"(a) joint>=client everywhere in {seeds_a}/5 seeds; (b) <=1 inversion in "
           f"{seeds_b}/5 seeds; (c) reject at c_e=1: max {max(probe):.3f}; "
           f"reject@c_e=0..0.5 seed0 {[round(r, 3) for r in rates_by_seed[0]]}; "
           f"{elapsed:.1f}s (limit 120s)")


def test_criterion_6_sync_async_agreement(acceptance_log, setups):
    start = time.perf_counter()
    costs = CostParams(0.25, 1.0)
    worst = {1: 0.0, 100: 0.0, 1000: 0.0}
    identical = True
    for seed in SEEDS:
        cfg = config(seed)
        _, sync = ex.train_point(cfg, setups[seed], costs)
        ref = sync.final_mean(500)
        for S in worst:
            _, trace = ex.train_point(cfg, setups[seed], costs, sync_interval=S)
            worst[S] = max(worst[S], abs(trace.final_mean(500) - ref) / ref)
            if S == 1:
                identical &= trace.same_as(sync)
    elapsed = time.perf_counter() - start
    ok = max(worst.values()) <= 0.05 and identical and elapsed < 180.0
    gaps = ", ".join(f"S={S}: {100 * g:.3g}%" for S, g in worst.items())
    report(acceptance_log, 6, ok, f"worst relative gap of final 500-step mean L_S over seeds "
           f"({gaps}; limit 5%), S=1 step-identical: {identical}, {elapsed:.1f}s (limit 180s)")


def test_criterion_7_bounded_reject_rate(acceptance_log, setups):
    start = time.perf_counter()
    costs = CostParams(0.25, 1.0)
    qs = (0.1, 0.3, 0.5)
    bound_ok, wins, modes, details = True, 0, set(), []
    for seed in SEEDS:
        setup = setups[seed]
        system, _ = ex.train_point(config(seed), setup, costs)
        q1 = calibrate(system, setup.cali)
        n = len(setup.test)
        seed_win = True
        for q in qs:
            policy = BrrPolicy(q, q1, derive_seed(seed, "brr"))
            modes.add(policy.mode)
            labels, used = brr_infer_batch(system, setup.test.x, policy, policy.stream())
            realized = float(np.mean(used == int(Route.REMOTE)))
            bound = q + 3.0 * math.sqrt(q * (1.0 - q) / n)
            bound_ok &= realized <= bound
            base, _ = random_reject_batch(system.client, system.server, setup.test.x, realized,
                                          derive_seed(seed, "baseline"))
            acc = float(np.mean(labels == setup.test.y))
            base_acc = float(np.mean(base == setup.test.y))
            seed_win &= acc >= base_acc
            details.append(f"s{seed} q={q}: {realized:.3f}/{bound:.3f}")
        wins += seed_win
    elapsed = time.perf_counter() - start
    ok = bound_ok and wins >= 4 and modes == {"under", "over"} and elapsed < 60.0
    report(acceptance_log, 7, ok, f"rate within bound for every seed: {bound_ok}; "
           f"BRR >= random baseline in {wins}/5 seeds; modes {sorted(modes)}; "
           f"{elapsed:.1f}s (limit 60s)")


def test_criterion_8_imbalance(acceptance_log, setups):
    start = time.perf_counter()
    costs = CostParams(0.25, 1.25)
    passed, gaps = 0, []
    for seed in SEEDS:
        setup = setups[seed]
        system, _ = ex.train_point(config(seed), setup, costs)
        rep = ex.evaluate(system, setup.test, costs)
        gap = rep.class_reject_rates[DROPPED] - rep.reject_ratio
        gaps.append(round(gap, 3))
        passed += gap >= 0.30 and rep.joint_accuracy > rep.client_accuracy
    elapsed = time.perf_counter() - start
    ok = passed >= 4 and elapsed < 60.0
    report(acceptance_log, 8, ok, f"{passed}/5 seeds pass; dropped-class minus overall "
           f"reject rate {gaps}; {elapsed:.1f}s (limit 60s)")


def test_criterion_9_determinism_and_persistence(acceptance_log, tmp_path):
    small = dict(n_train=1500, n_cali=300, n_test=600, ce_grid=(0.1, 0.3), q_grid=(0.2,))
    a = ex.sweep(config(7, **small))
    b = ex.sweep(config(7, **small))
    same_bytes = json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)

    cfg = config(7, **small)
    setup = ex.prepare(cfg)
    costs = CostParams(0.3, 1.0)
    system, _ = ex.train_point(cfg, setup, costs)
    r1 = ex.evaluate(system, setup.test, costs).to_json()
    r2 = ex.evaluate(ex.train_point(cfg, ex.prepare(cfg), costs)[0], setup.test, costs).to_json()
    save_system(system, tmp_path / "sys")
    loaded = load_system(tmp_path / "sys")
    X = np.random.default_rng(0).normal(scale=3.0, size=(100, 2))
    exact = all(np.max(np.abs(getattr(loaded, part).forward(X) - getattr(system, part).forward(X)))
                == 0.0 for part in ("client", "rejector", "server"))
    ok = same_bytes and r1 == r2 and exact
    report(acceptance_log, 9, ok, f"sweep records identical: {same_bytes}; report bytes "
           f"identical: {r1 == r2}; checkpoint forward-exact on 100 inputs: {exact}")
