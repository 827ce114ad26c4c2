"""Forward-branch behavior: hand examples, linearity, noise, hyperedges."""

import numpy as np
import pytest

from busgcl import autodiff as ad
from busgcl.data import build_normalized_adjacency
from busgcl.errors import GraphError
from busgcl.model import (
    ModelParams,
    forward_gcn,
    forward_hypergraph,
    forward_perturbed,
    init_params,
    predict_scores,
    spherical_noise,
)
from busgcl.seeding import stream

from conftest import random_dataset, split_from_pairs


def make_params(e_user, e_item, w_user=None, w_item=None):
    d = np.asarray(e_user).shape[1]
    if w_user is None:
        w_user = np.zeros((d, 2))
    if w_item is None:
        w_item = np.zeros((d, 2))
    return ModelParams(
        e_user=ad.parameter(e_user),
        e_item=ad.parameter(e_item),
        w_user=ad.parameter(w_user),
        w_item=ad.parameter(w_item),
    )


def single_pair_graph():
    return build_normalized_adjacency(split_from_pairs([(0, 0)], 1, 1))


def random_setup(seed, num_users=6, num_items=8, dim=3, hyperedges=2):
    rng = np.random.default_rng(seed)
    split = split_from_pairs(random_dataset(rng, num_users, num_items, 20),
                             num_users, num_items)
    graph = build_normalized_adjacency(split)
    params = init_params(num_users, num_items, dim, hyperedges, stream(seed, "init"))
    return graph, params


class TestGcn:
    def test_hand_example_single_pair(self):
        params = make_params([[2.0, 0.0]], [[0.0, 3.0]])
        stack = forward_gcn(params, single_pair_graph(), 1)
        np.testing.assert_allclose(stack.layer_user[0].data, [[0.0, 3.0]])
        np.testing.assert_allclose(stack.readout_user[0].data, [[2.0, 3.0]])
        np.testing.assert_allclose(stack.layer_item[0].data, [[2.0, 0.0]])
        np.testing.assert_allclose(stack.readout_item[0].data, [[0.0 + 2.0, 3.0 + 0.0]])

    def test_zero_embeddings_stay_zero(self):
        graph, params = random_setup(0)
        zeros = make_params(
            np.zeros_like(params.e_user.data), np.zeros_like(params.e_item.data)
        )
        stack = forward_gcn(zeros, graph, 3)
        for t in stack.layer_user + stack.layer_item + stack.readout_user + stack.readout_item:
            assert np.all(t.data == 0)

    def test_homogeneity(self):
        graph, params = random_setup(1)
        c = 2.75
        scaled = make_params(c * params.e_user.data, c * params.e_item.data)
        base = make_params(params.e_user.data, params.e_item.data)
        s1 = forward_gcn(base, graph, 3)
        s2 = forward_gcn(scaled, graph, 3)
        for a, b in zip(s1.layer_user + s1.readout_item, s2.layer_user + s2.readout_item):
            np.testing.assert_allclose(c * a.data, b.data, atol=1e-9)

    def test_readout_recurrence(self):
        graph, params = random_setup(2)
        stack = forward_gcn(params, graph, 4)
        prev_u, prev_i = stack.base_user.data, stack.base_item.data
        for l in range(4):
            np.testing.assert_allclose(
                stack.readout_user[l].data, prev_u + stack.layer_user[l].data, atol=1e-12
            )
            np.testing.assert_allclose(
                stack.readout_item[l].data, prev_i + stack.layer_item[l].data, atol=1e-12
            )
            prev_u = stack.readout_user[l].data
            prev_i = stack.readout_item[l].data

    def test_dimension_mismatch(self):
        graph, params = random_setup(3)
        bad = make_params(params.e_user.data[:-1], params.e_item.data)
        with pytest.raises(GraphError):
            forward_gcn(bad, graph, 2)


class TestPerturbed:
    def test_zero_radius_matches_gcn_bitwise(self):
        graph, params = random_setup(4)
        plain = forward_gcn(params, graph, 3)
        noisy = forward_perturbed(params, graph, 3, 0.0, stream(0, "noise"))
        for a, b in zip(plain.readout_user, noisy.readout_user):
            assert np.array_equal(a.data, b.data)
        assert noisy.noise == []

    def test_noise_norm_exact(self):
        graph, params = random_setup(5)
        r = 0.37
        stack = forward_perturbed(params, graph, 3, r, stream(1, "noise"))
        for du, di in stack.noise:
            np.testing.assert_allclose(np.linalg.norm(du, axis=1), r, atol=1e-9)
            np.testing.assert_allclose(np.linalg.norm(di, axis=1), r, atol=1e-9)

    def test_noise_signs_match_embedding(self):
        rng = stream(2, "noise")
        values = np.random.default_rng(0).standard_normal((1000, 6))
        noise = spherical_noise(values, 0.1, rng)
        nonzero = values != 0
        assert np.all(np.sign(noise[nonzero]) == np.sign(values[nonzero]))

    def test_seeded_reproducibility_bitwise(self):
        graph, params = random_setup(6)
        s1 = forward_perturbed(params, graph, 2, 0.1, stream(3, "noise"))
        s2 = forward_perturbed(params, graph, 2, 0.1, stream(3, "noise"))
        for a, b in zip(s1.readout_item, s2.readout_item):
            assert np.array_equal(a.data, b.data)

    def test_noise_replay(self):
        graph, params = random_setup(7)
        s1 = forward_perturbed(params, graph, 2, 0.2, stream(4, "noise"))
        s2 = forward_perturbed(params, graph, 2, 0.2, noise=s1.noise)
        for a, b in zip(s1.readout_user, s2.readout_user):
            assert np.array_equal(a.data, b.data)

    def test_readout_recurrence_holds(self):
        graph, params = random_setup(8)
        stack = forward_perturbed(params, graph, 3, 0.1, stream(5, "noise"))
        prev = stack.base_user.data
        for l in range(3):
            np.testing.assert_allclose(
                stack.readout_user[l].data, prev + stack.layer_user[l].data, atol=1e-12
            )
            prev = stack.readout_user[l].data


class TestHypergraph:
    def test_zero_hyperedges_zero_output(self):
        graph, params = random_setup(9)
        zeroed = ModelParams(
            e_user=params.e_user, e_item=params.e_item,
            w_user=ad.parameter(np.zeros_like(params.w_user.data)),
            w_item=ad.parameter(np.zeros_like(params.w_item.data)),
        )
        gcn = forward_gcn(zeroed, graph, 2)
        stack = forward_hypergraph(zeroed, gcn, 2)
        for t in stack.layer_user + stack.layer_item:
            assert np.all(t.data == 0)

    def test_hand_example(self):
        # one user/one item, H=1: projection [[1]], pre-activation [[1, 0]]
        params = make_params([[1.0, 0.0]], [[1.0, 0.0]],
                             w_user=[[1.0], [0.0]], w_item=[[1.0], [0.0]])
        graph = single_pair_graph()
        gcn = forward_gcn(params, graph, 1)
        # readout entering layer 1 is the base [[1, 0]]
        stack = forward_hypergraph(params, gcn, 1)
        np.testing.assert_allclose(stack.layer_user[0].data, [[1.0, 0.0]])
        np.testing.assert_allclose(stack.readout_user[0].data, [[2.0, 0.0]])

    def test_factored_matches_dense_oracle(self):
        for seed in range(20):
            graph, params = random_setup(seed, num_users=4, num_items=8, dim=3,
                                         hyperedges=2)
            gcn = forward_gcn(params, graph, 2)
            stack = forward_hypergraph(params, gcn, 2, slope=0.5)
            for l in range(1, 3):
                eu = gcn.user_readout_before(l).data
                h = eu @ params.w_user.data
                pre = (h @ h.T) @ eu
                expect = np.where(pre > 0, pre, 0.5 * pre)
                np.testing.assert_allclose(
                    stack.layer_user[l - 1].data, expect, atol=1e-10
                )

    def test_leaky_relu_sanity(self):
        graph, params = random_setup(10)
        gcn = forward_gcn(params, graph, 2)
        slope = 0.5
        stack = forward_hypergraph(params, gcn, 2, slope=slope)
        for l in range(1, 3):
            eu = gcn.user_readout_before(l).data
            h = eu @ params.w_user.data
            pre = (h @ h.T) @ eu
            out = stack.layer_user[l - 1].data
            assert np.all(out >= slope * pre - 1e-12)
            np.testing.assert_allclose(out[pre >= 0], pre[pre >= 0])

    def test_requires_gcn_stack(self):
        graph, params = random_setup(11)
        noisy = forward_perturbed(params, graph, 2, 0.1, stream(0, "noise"))
        with pytest.raises(GraphError):
            forward_hypergraph(params, noisy, 2)

    def test_layer_budget_checked(self):
        graph, params = random_setup(12)
        gcn = forward_gcn(params, graph, 1)
        with pytest.raises(GraphError):
            forward_hypergraph(params, gcn, 2)


class TestPredict:
    def test_dot_product(self):
        params = make_params([[1.0, 2.0]], [[3.0, 4.0]])
        stack = forward_gcn(params, single_pair_graph(), 0)
        assert predict_scores(stack, 0, [0])[0] == 11.0

    def test_zero_user_vector(self):
        params = make_params([[0.0, 0.0]], [[3.0, 4.0]])
        stack = forward_gcn(params, single_pair_graph(), 0)
        assert predict_scores(stack, 0, [0])[0] == 0.0

    def test_symmetry_of_dot(self):
        a, b = np.array([1.0, 2.0, -3.0]), np.array([0.5, -1.0, 2.0])
        assert np.dot(a, b) == np.dot(b, a)

    def test_index_errors(self):
        params = make_params([[1.0, 2.0]], [[3.0, 4.0]])
        stack = forward_gcn(params, single_pair_graph(), 1)
        with pytest.raises(IndexError):
            predict_scores(stack, 5, [0])
        with pytest.raises(IndexError):
            predict_scores(stack, 0, [3])

    def test_requires_gcn_branch(self):
        graph, params = random_setup(13)
        noisy = forward_perturbed(params, graph, 1, 0.1, stream(0, "noise"))
        with pytest.raises(GraphError):
            predict_scores(noisy, 0, [0])


class TestGradientsThroughBranches:
    def test_gcn_linearity_gradient(self):
        graph, params = random_setup(14)
        stack = forward_gcn(params, graph, 2)
        loss = (stack.readout_user[-1] * stack.readout_user[-1]).sum()
        loss.backward()
        assert params.e_user.grad is not None
        assert params.e_item.grad is not None
        assert np.all(np.isfinite(params.e_user.grad))

    def test_hypergraph_grad_reaches_w(self):
        graph, params = random_setup(15)
        gcn = forward_gcn(params, graph, 2)
        stack = forward_hypergraph(params, gcn, 2)
        (stack.readout_user[-1] * stack.readout_user[-1]).sum().backward()
        assert params.w_user.grad is not None
        assert np.any(params.w_user.grad != 0)
