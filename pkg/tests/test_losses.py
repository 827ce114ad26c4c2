"""Objective terms against closed forms and explicit-loop oracles."""

import math

import numpy as np
import pytest

from busgcl import autodiff as ad
from busgcl.losses import (
    DIAGNOSTICS,
    LossBreakdown,
    LossWeights,
    bpr_loss,
    dispersing_loss,
    infonce_bilateral,
    kl_uniform_loss,
    l2_regularization,
    reset_diagnostics,
    total_loss,
)
from busgcl.model import BranchStack, ModelParams


def cosine(a, b):
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(a @ b) / (na * nb)


def infonce_brute(anchor_layers, other_layers, nodes, tau):
    total = 0.0
    for A, O in zip(anchor_layers, other_layers):
        for k in nodes:
            den = sum(math.exp(cosine(A[k], O[kp]) / tau) for kp in nodes)
            num = math.exp(cosine(A[k], O[k]) / tau)
            total += -math.log(num / den)
    return total


def disp_brute(rows, tau):
    n = len(rows)
    total = 0.0
    for k in range(n):
        num = math.exp(cosine(rows[k], rows[k]) / tau)
        den = sum(math.exp(cosine(rows[k], rows[kp]) / tau) for kp in range(n))
        total += -math.log(num / den)
    return total


def kl_brute(rows):
    rows = np.asarray(rows, dtype=np.float64)
    n, d = rows.shape
    total = 0.0
    for j in range(d):
        col = rows[:, j]
        p = np.exp(col - col.max())
        p /= p.sum()
        total += float(np.sum(p * np.log(p * n)))
    return total / d


def stack_from_layers(user_layers, item_layers=None, tag="gcn"):
    user_layers = [np.asarray(a, dtype=np.float64) for a in user_layers]
    if item_layers is None:
        item_layers = user_layers
    item_layers = [np.asarray(a, dtype=np.float64) for a in item_layers]
    return BranchStack(
        branch_tag=tag,
        base_user=ad.constant(user_layers[0]),
        base_item=ad.constant(item_layers[0]),
        layer_user=[ad.parameter(a) for a in user_layers],
        layer_item=[ad.parameter(a) for a in item_layers],
        readout_user=[ad.parameter(a) for a in user_layers],
        readout_item=[ad.parameter(a) for a in item_layers],
    )


class TestInfoNCE:
    def test_single_node_identical_views_zero(self):
        a = [[1.0, 2.0]]
        s1 = stack_from_layers([a])
        s2 = stack_from_layers([a])
        out = infonce_bilateral(s1, s2, "user", [0], tau_c=0.7)
        assert abs(float(out.data)) < 1e-12

    def test_two_orthogonal_nodes_closed_form(self):
        a = [[2.0, 0.0], [0.0, 5.0]]
        s1 = stack_from_layers([a])
        s2 = stack_from_layers([a])
        out = infonce_bilateral(s1, s2, "user", [0, 1], tau_c=1.0)
        per_node = math.log(1 + math.exp(-1.0))
        assert abs(per_node - 0.31326) < 5e-6
        np.testing.assert_allclose(float(out.data), 2 * per_node, atol=1e-10)

    def test_brute_force_oracle(self):
        for seed in range(20):
            rng = np.random.default_rng(seed)
            n, d, layers = rng.integers(2, 7), 3, 2
            ua = [rng.standard_normal((n, d)) for _ in range(layers)]
            ub = [rng.standard_normal((n, d)) for _ in range(layers)]
            s1 = stack_from_layers(ua)
            s2 = stack_from_layers(ub)
            nodes = list(range(n))
            tau = float(rng.uniform(0.2, 2.0))
            batched = float(infonce_bilateral(s1, s2, "user", nodes, tau).data)
            brute = infonce_brute(ua, ub, nodes, tau)
            np.testing.assert_allclose(batched, brute, atol=1e-8)

    def test_item_side_uses_item_layers(self):
        ua = [np.ones((2, 2))]
        ia = [np.array([[1.0, 0.0], [0.0, 1.0]])]
        s1 = stack_from_layers(ua, ia)
        s2 = stack_from_layers(ua, ia)
        out = float(infonce_bilateral(s1, s2, "item", [0, 1], 1.0).data)
        np.testing.assert_allclose(out, infonce_brute(ia, ia, [0, 1], 1.0), atol=1e-10)

    def test_temperature_monotonicity(self):
        a = [np.eye(4)]
        s1 = stack_from_layers(a)
        s2 = stack_from_layers(a)
        values = [
            float(infonce_bilateral(s1, s2, "user", range(4), tau).data)
            for tau in (1.0, 0.5, 0.1)
        ]
        assert values[0] > values[1] > values[2]

    def test_zero_norm_rows_flagged(self):
        reset_diagnostics()
        a = [np.array([[0.0, 0.0], [1.0, 2.0]])]
        s1 = stack_from_layers(a)
        s2 = stack_from_layers(a)
        out = float(infonce_bilateral(s1, s2, "user", [0, 1], 1.0).data)
        assert DIAGNOSTICS["zero_norm_rows"] > 0
        np.testing.assert_allclose(out, infonce_brute(a, a, [0, 1], 1.0), atol=1e-10)

    def test_layer_count_mismatch_rejected(self):
        s1 = stack_from_layers([np.ones((2, 2))])
        s2 = stack_from_layers([np.ones((2, 2)), np.ones((2, 2))])
        with pytest.raises(ValueError):
            infonce_bilateral(s1, s2, "user", [0], 1.0)

    def test_empty_node_set_rejected(self):
        s1 = stack_from_layers([np.ones((2, 2))])
        with pytest.raises(ValueError):
            infonce_bilateral(s1, s1, "user", [], 1.0)

    def test_cosine_bounds(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((10, 4)) * 5
        xn = x / np.linalg.norm(x, axis=1, keepdims=True)
        sims = xn @ xn.T
        assert np.all(sims <= 1 + 1e-12) and np.all(sims >= -1 - 1e-12)


class TestDispersing:
    def test_single_row_zero(self):
        out = dispersing_loss(ad.constant([[3.0, 4.0]]), 1.0)
        assert abs(float(out.data)) < 1e-12

    def test_three_orthogonal_rows(self):
        rows = np.eye(3)
        out = float(dispersing_loss(ad.constant(rows), 1.0).data)
        per_row = math.log(1 + 2 * math.exp(-1.0))
        assert abs(per_row - 0.5514447) < 5e-8
        np.testing.assert_allclose(out, 3 * per_row, atol=1e-9)
        assert abs(out - 1.6543341) < 5e-7

    def test_identical_rows_log_n(self):
        for n in (2, 5, 9):
            rows = np.tile([[1.0, 2.0, 3.0]], (n, 1))
            out = float(dispersing_loss(ad.constant(rows), 1.0).data)
            np.testing.assert_allclose(out, n * math.log(n), atol=1e-9)

    def test_brute_force_oracle(self):
        for seed in range(20):
            rng = np.random.default_rng(100 + seed)
            rows = rng.standard_normal((int(rng.integers(2, 9)), 4))
            tau = float(rng.uniform(0.3, 3.0))
            out = float(dispersing_loss(ad.constant(rows), tau).data)
            np.testing.assert_allclose(out, disp_brute(rows, tau), atol=1e-8)

    def test_common_scaling_invariance(self):
        rng = np.random.default_rng(5)
        rows = rng.standard_normal((6, 3))
        base = float(dispersing_loss(ad.constant(rows), 0.8).data)
        for c in (0.01, 3.0, 250.0):
            scaled = float(dispersing_loss(ad.constant(c * rows), 0.8).data)
            np.testing.assert_allclose(scaled, base, atol=1e-9)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(6)
        rows = rng.standard_normal((7, 3))
        perm = rng.permutation(7)
        a = float(dispersing_loss(ad.constant(rows), 1.2).data)
        b = float(dispersing_loss(ad.constant(rows[perm]), 1.2).data)
        np.testing.assert_allclose(a, b, atol=1e-9)

    def test_zero_row_flagged_and_matches_oracle(self):
        reset_diagnostics()
        rows = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        out = float(dispersing_loss(ad.constant(rows), 1.0).data)
        assert DIAGNOSTICS["zero_norm_rows"] == 1
        np.testing.assert_allclose(out, disp_brute(rows, 1.0), atol=1e-10)


class TestBpr:
    def test_equal_scores_log2(self):
        out = float(bpr_loss(ad.constant([1.5]), ad.constant([1.5])).data)
        np.testing.assert_allclose(out, math.log(2), atol=1e-12)
        assert abs(out - 0.69315) < 5e-6

    def test_large_positive_gap_saturates(self):
        out = float(bpr_loss(ad.constant([40.0]), ad.constant([0.0])).data)
        assert 0 <= out < 1e-15

    def test_large_negative_gap_no_overflow(self):
        out = float(bpr_loss(ad.constant([0.0]), ad.constant([40.0])).data)
        assert np.isfinite(out)
        np.testing.assert_allclose(out, 40.0, atol=1e-12)

    def test_sum_over_triples(self):
        out = float(bpr_loss(ad.constant([0.0, 0.0]), ad.constant([0.0, 0.0])).data)
        np.testing.assert_allclose(out, 2 * math.log(2), atol=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            bpr_loss(ad.constant([1.0]), ad.constant([1.0, 2.0]))


class TestRegularization:
    def make(self, e_user):
        return ModelParams(
            e_user=ad.parameter(e_user),
            e_item=ad.parameter(np.zeros((1, 2))),
            w_user=ad.parameter(np.zeros((2, 2))),
            w_item=ad.parameter(np.zeros((2, 2))),
        )

    def test_zero_params(self):
        assert float(l2_regularization(self.make(np.zeros((1, 2)))).data) == 0.0

    def test_three_four_five(self):
        assert float(l2_regularization(self.make(np.array([[3.0, 4.0]]))).data) == 25.0

    def test_doubling_quadruples(self):
        rng = np.random.default_rng(2)
        e = rng.standard_normal((3, 2))
        v1 = float(l2_regularization(self.make(e)).data)
        v2 = float(l2_regularization(self.make(2 * e)).data)
        np.testing.assert_allclose(v2, 4 * v1, atol=1e-9)


class TestTotal:
    def test_zero_weights(self):
        w = LossWeights(lambda_c=0.0, lambda_d=0.0, lambda_r=0.0, tau_c=1.0, tau_d=1.0)
        bd = total_loss(1.7, 2.0, 3.0, 4.0, 5.0, w)
        assert bd.total == 1.7

    def test_worked_arithmetic(self):
        w = LossWeights(lambda_c=0.1, lambda_d=1.0, lambda_r=0.01, tau_c=1.0, tau_d=1.0)
        bd = total_loss(1.0, 2.0, 3.0, 4.0, 5.0, w)
        np.testing.assert_allclose(bd.total, 5.55, atol=1e-12)

    def test_resum_invariant_random(self):
        rng = np.random.default_rng(3)
        for _ in range(25):
            parts = rng.uniform(0, 10, size=5)
            w = LossWeights(*rng.uniform(0.01, 2.0, size=3), *rng.uniform(0.1, 2.0, size=2))
            bd = total_loss(*parts, w)
            resum = (bd.rec + w.lambda_c * (bd.cl_user + bd.cl_item)
                     + w.lambda_d * bd.disp + w.lambda_r * bd.reg)
            np.testing.assert_allclose(bd.total, resum, atol=1e-9)

    def test_invalid_weights_rejected(self):
        with pytest.raises(ValueError):
            LossWeights(tau_c=0.0)
        with pytest.raises(ValueError):
            LossWeights(lambda_c=-0.1)


class TestKlUniform:
    def test_constant_column_zero(self):
        rows = np.tile([[2.5, -1.0]], (4, 1))
        out = float(kl_uniform_loss(ad.constant(rows)).data)
        np.testing.assert_allclose(out, 0.0, atol=1e-12)

    def test_two_node_closed_form(self):
        c = 0.37
        rows = np.array([[c], [c + math.log(3)]])
        # one dimension is below the d >= 2 path; use two identical dims
        rows = np.hstack([rows, rows])
        out = float(kl_uniform_loss(ad.constant(rows)).data)
        expected = 0.25 * math.log(0.5) + 0.75 * math.log(1.5)
        assert abs(expected - 0.13081) < 5e-6
        np.testing.assert_allclose(out, expected, atol=1e-10)

    def test_non_negative_random(self):
        rng = np.random.default_rng(4)
        for _ in range(25):
            rows = rng.standard_normal((int(rng.integers(2, 10)), 3)) * 3
            out = float(kl_uniform_loss(ad.constant(rows)).data)
            assert out >= -1e-12

    def test_brute_force_oracle(self):
        for seed in range(20):
            rng = np.random.default_rng(200 + seed)
            rows = rng.standard_normal((int(rng.integers(2, 9)), 4))
            out = float(kl_uniform_loss(ad.constant(rows)).data)
            np.testing.assert_allclose(out, kl_brute(rows), atol=1e-8)

    def test_single_row_rejected(self):
        with pytest.raises(ValueError):
            kl_uniform_loss(ad.constant(np.ones((1, 3))))
