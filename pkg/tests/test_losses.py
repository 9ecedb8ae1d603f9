import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from l2h import losses
from l2h.core import CostParams
from l2h.harness.gradcheck import (check_backprop_l1, check_backprop_l2, check_l1_scores,
                                   check_l2_scores, numeric_grad)
from l2h.losses import L2Weights, chord_gap, l2_grad, l2_loss, l2_surface, l2_weights

score = st.floats(-50, 50, allow_nan=False)
weight_a = st.floats(-2.0, 3.0, allow_nan=False)
weight_b = st.sampled_from([0.0, 1.0])


class TestL1:
    def test_uniform_scores(self):
        for y in range(3):
            assert losses.l1_loss(np.zeros(3), y) == pytest.approx(math.log(3), abs=1e-12)

    def test_confident_examples(self):
        assert losses.l1_loss([10.0, 0.0, 0.0], 0) == pytest.approx(9.0797e-5, rel=1e-4)
        assert losses.l1_loss([0.0, 10.0], 0) == pytest.approx(10.0000454, abs=1e-7)

    def test_no_overflow(self):
        assert losses.l1_loss([1000.0, -1000.0], 1) == pytest.approx(2000.0)

    def test_grad_example(self):
        np.testing.assert_allclose(losses.l1_grad_scores(np.zeros(2), 0), [-0.5, 0.5])

    @given(st.lists(score, min_size=2, max_size=6), st.data())
    def test_grad_sums_to_zero(self, s, data):
        y = data.draw(st.integers(0, len(s) - 1))
        assert abs(losses.l1_grad_scores(np.array(s), y).sum()) < 1e-12

    def test_grad_matches_finite_differences(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            assert check_l1_scores(rng) < 1e-6


class TestL2Weights:
    def test_examples(self):
        c = CostParams(0.25, 1.25)
        assert l2_weights(2, 0, 2, c) == L2Weights(0.75, 0.0)
        assert l2_weights(0, 2, 2, c) == L2Weights(-0.5, 1.0)
        for e in range(3):
            assert l2_weights(e, 1, 1, CostParams(0, 0)).a == 1.0


class TestL2:
    def test_examples(self):
        assert l2_loss(0, 0, L2Weights(1, 1)) == pytest.approx(2 * math.log(2))
        assert l2_loss(0, 0, L2Weights(-0.5, 1)) == pytest.approx(0.5 * math.log(2))
        assert l2_loss(0, 50, L2Weights(1, 0)) < 1e-20
        assert l2_loss(0, 1e6, L2Weights(1, 0)) == 0.0

    def test_grad_examples(self):
        assert l2_grad(0.7, 0.7, L2Weights(1, 1)) == (0.0, 0.0)
        assert l2_grad(0, 0, L2Weights(1, 0)) == (0.5, -0.5)

    def test_huge_margin_is_finite(self):
        w = L2Weights(-0.5, 0.0)
        assert l2_loss(1e300, -1e300, w) == -math.inf or math.isfinite(l2_loss(800, 0, w))
        assert all(math.isfinite(v) for v in l2_grad(1e6, -1e6, w))

    def test_grad_matches_finite_differences(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            assert check_l2_scores(rng) < 1e-6

    @given(score, score, weight_a, weight_b)
    def test_antisymmetry(self, r1, r2, a, b):
        d1, d2 = l2_grad(r1, r2, L2Weights(a, b))
        assert d1 + d2 == 0.0

    @given(score, score, st.floats(-100, 100, allow_nan=False), weight_a, weight_b)
    def test_translation_invariance(self, r1, r2, c, a, b):
        w = L2Weights(a, b)
        # exact in d = r1 - r2; allow for rounding of the shifted inputs
        assert l2_loss(r1 + c, r2 + c, w) == pytest.approx(l2_loss(r1, r2, w), rel=1e-9, abs=1e-9)

    @given(score, score, score, score, st.floats(1e-6, 3.0), weight_b)
    def test_convex_for_positive_a(self, u1, u2, v1, v2, a, b):
        f = l2_surface(L2Weights(a, b))
        assert chord_gap(f, [u1, u2], [v1, v2]) >= -1e-12

    @given(score, score, st.floats(0.0, 10.0), st.floats(-2.0, 0.0), weight_b)
    def test_monotone_for_nonpositive_a(self, r1, r2, delta, a, b):
        w = L2Weights(a, b)
        assert l2_loss(r1 + delta, r2, w) <= l2_loss(r1, r2, w) + 1e-12
        assert l2_loss(r1, r2 + delta, w) >= l2_loss(r1, r2, w) - 1e-12

    def test_chord_gap_zero_on_equal_points(self):
        f = l2_surface(L2Weights(0.3, 1))
        assert chord_gap(f, [1.0, 2.0], [1.0, 2.0]) == 0.0

    def test_surrogate_is_sum(self):
        c = CostParams(0.25, 1.25)
        r, e = np.array([0.3, -0.2]), np.array([0.1, 2.0, -1.0])
        w = l2_weights(1, 0, 1, c)
        assert losses.surrogate_loss(r, e, 1, 0, c) == losses.l1_loss(e, 1) + l2_loss(0.3, -0.2, w)


class TestBackprop:
    @pytest.mark.parametrize("arch", ["linear", "mlp1"])
    def test_l1_params(self, arch):
        rng = np.random.default_rng(2)
        assert max(check_backprop_l1(rng, arch) for _ in range(10)) < 1e-4

    @pytest.mark.parametrize("arch", ["linear", "mlp1"])
    def test_l2_params(self, arch):
        rng = np.random.default_rng(3)
        assert max(check_backprop_l2(rng, arch) for _ in range(10)) < 1e-4

    def test_numeric_grad_of_quadratic(self):
        g = numeric_grad(lambda v: float(v @ v), np.array([1.0, -2.0, 0.5]))
        np.testing.assert_allclose(g, [2.0, -4.0, 1.0], rtol=1e-8)
