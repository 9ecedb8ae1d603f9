import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from l2h.core import (CostParams, Dataset, GeneralCosts, Route, argmax_label, derive_seed,
                      general_loss, generalized_loss, route_from_scores)

COSTS = CostParams(0.25, 1.25)
finite = st.floats(-1e6, 1e6, allow_nan=False)
cost = st.floats(0.0, 5.0, allow_nan=False)


class TestArgmax:
    def test_unique_maximum(self):
        assert argmax_label([0.1, 0.9, 0.3]) == 1

    def test_tie_goes_to_lowest_index(self):
        assert argmax_label([0.5, 0.5, 0.2]) == 0

    def test_single_class(self):
        assert argmax_label([-3.0]) == 0

    @pytest.mark.parametrize("bad", [[], [np.nan, 1.0], [np.inf]])
    def test_rejects_bad_input(self, bad):
        with pytest.raises(ValueError):
            argmax_label(bad)

    @given(st.lists(finite, min_size=1, max_size=8, unique=True), st.randoms())
    def test_permutation_consistent(self, scores, rnd):
        perm = list(range(len(scores)))
        rnd.shuffle(perm)
        permuted = [scores[p] for p in perm]
        assert perm[argmax_label(permuted)] == argmax_label(scores)


class TestRouting:
    @pytest.mark.parametrize("r1, r2, expected", [
        (1.0, 0.0, Route.LOCAL),
        (0.0, 0.0, Route.REMOTE),
        (-2.0, -1.0, Route.REMOTE),
    ])
    def test_examples(self, r1, r2, expected):
        assert route_from_scores(r1, r2) == expected

    @given(finite, finite)
    def test_remote_unless_strictly_local(self, a, b):
        assert (route_from_scores(a, b) == Route.REMOTE) == (a <= b)

    def test_encoding(self):
        assert int(Route.LOCAL) == 1 and int(Route.REMOTE) == -1
        assert str(Route.REMOTE) == "remote"


class TestGeneralizedLoss:
    @pytest.mark.parametrize("route, lp, rp, y, expected", [
        (Route.LOCAL, 2, 0, 2, 0.0),
        (Route.REMOTE, 0, 2, 2, 0.25),
        (Route.REMOTE, 0, 1, 2, 1.5),
        (Route.LOCAL, 0, 2, 2, 1.0),
    ])
    def test_examples(self, route, lp, rp, y, expected):
        assert generalized_loss(route, lp, rp, y, COSTS) == expected

    def test_general_form_examples(self):
        assert general_loss(Route.LOCAL, 1, 0, 1, GeneralCosts(1, 2, 3, 4)) == 1
        assert general_loss(Route.REMOTE, 0, 0, 1, GeneralCosts(0, 1, 0.5, 2)) == 2

    @given(cost, cost, st.sampled_from(list(Route)),
           st.integers(0, 3), st.integers(0, 3), st.integers(0, 3))
    def test_value_set_and_special_case(self, c_e, c_1, route, lp, rp, y):
        costs = CostParams(c_e, c_1)
        v = generalized_loss(route, lp, rp, y, costs)
        assert v in {0.0, 1.0, c_e, c_e + c_1}
        assert v == general_loss(route, lp, rp, y, costs.as_general())

    def test_negative_costs_rejected(self):
        with pytest.raises(ValueError):
            CostParams(-0.1, 1.0)
        with pytest.raises(ValueError):
            CostParams(0.1, -1.0)

    def test_threshold_offset(self):
        assert COSTS.threshold_offset == pytest.approx(-0.5)


class TestDataset:
    def test_basic(self):
        d = Dataset([[0.0, 1.0], [2.0, 3.0]], [0, 2], 3)
        assert len(d) == 2 and d.dim == 2
        assert d.y.dtype == np.int64
        rows = list(d)
        assert rows[1][1] == 2
        sub = d.subset([1])
        assert len(sub) == 1 and sub.num_classes == 3

    @pytest.mark.parametrize("x, y, k", [
        ([[0.0]], [1], 1),  # label out of range
        ([[0.0], [1.0]], [0], 2),  # length mismatch
        ([[np.nan]], [0], 2),  # non-finite
        ([0.0, 1.0], [0, 0], 2),  # not 2-D
        (np.zeros((0, 2)), np.zeros(0, dtype=int), 2),  # empty
    ])
    def test_validation(self, x, y, k):
        with pytest.raises(ValueError):
            Dataset(x, y, k)


class TestDeriveSeed:
    def test_deterministic_and_distinct(self):
        names = ["data", "client-init", "server-init", "rejector-init", "train-order"]
        seeds = [derive_seed(7, n) for n in names]
        assert seeds == [derive_seed(7, n) for n in names]
        assert len(set(seeds)) == len(seeds)
        assert derive_seed(7, "data") != derive_seed(8, "data")

    def test_paths(self):
        pairs = itertools.combinations([("a",), ("a", 1), ("a", 2), (1, "a")], 2)
        for p, q in pairs:
            assert derive_seed(0, *p) != derive_seed(0, *q)


class TestGeneralCosts:
    @pytest.mark.parametrize("q", [(1, 0, 2, 3), (0, 1, 3, 2), (1, 2, 0, 3)])
    def test_ordering_violations(self, q):
        with pytest.raises(ValueError):
            GeneralCosts(*q)

    def test_cheap_remote_allowed(self):
        # c_e + c_1 < 1 is a legitimate generalized 0-1 configuration
        assert CostParams(0.1, 0.5).as_general().c_se == pytest.approx(0.6)
