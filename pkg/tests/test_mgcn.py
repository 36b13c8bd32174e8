import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from iciclegcn import tensor as T
from iciclegcn.config import Config
from iciclegcn.contrastive import AutoEncoder
from iciclegcn.errors import ConfigError, DegenerateInputError, DimensionError, DomainError
from iciclegcn.graph import build_knn_graph, normalize_adjacency
from iciclegcn.kmeans import kmeans
from iciclegcn.mgcn import (
    TridentModel,
    assign_clusters,
    fuse_representations,
    gcn_layer,
    kl_divergence,
    kl_divergence_logits,
    kmeans_init_centers,
    l2_total,
    mgcn_reconstruction_loss,
    phase2_objective,
    student_t_assignment,
    target_distribution,
    train_phase2,
    trident_forward,
)
from iciclegcn.optim import Adam
from iciclegcn.tensor import Tensor, grad_check, grad_check_params

SMALL = Config(ae_hidden=(8, 7), alpha=0.1, beta=0.1, eta=0.1, lr=1e-3, n_it=5)


def stochastic(rng, n, k, scale=2.0):
    return T.row_softmax(Tensor(rng.normal(size=(n, k)) * scale)).data


def small_model(cfg=SMALL, n=6, d=5, k=3, seed=0):
    rng = np.random.default_rng(seed)
    z = rng.normal(size=(n, d))
    ae = AutoEncoder(d, cfg.ae_hidden, k, rng)
    adj_a = normalize_adjacency(build_knn_graph(z, cfg.k_a if cfg.k_a < n else 1))
    adj_b = normalize_adjacency(build_knn_graph(z, min(cfg.k_b, n - 1)))
    centers = rng.normal(size=(k, k))
    return TridentModel(ae, adj_a, adj_b if cfg.streams == "two" else None, centers, cfg), z


class TestGcnLayer:
    def test_identity_propagation(self):
        x = np.abs(np.random.default_rng(0).normal(size=(4, 3)))
        out = gcn_layer(np.eye(4), Tensor(x), Tensor(np.eye(3)))
        np.testing.assert_array_equal(out.data, x)

    def test_zero_weight(self):
        out = gcn_layer(np.full((3, 3), 1 / 3), Tensor(np.ones((3, 2))), Tensor(np.zeros((2, 4))))
        np.testing.assert_array_equal(out.data, np.zeros((3, 4)))

    def test_two_node_aggregation(self):
        out = gcn_layer(np.full((2, 2), 0.5), Tensor([[2.0], [0.0]]), Tensor([[1.0]]))
        assert out.data.tolist() == [[1.0], [1.0]]

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            gcn_layer(np.eye(3), Tensor(np.ones((4, 2))), Tensor(np.ones((2, 2))))

    def test_gradient(self):
        rng = np.random.default_rng(1)
        adj = normalize_adjacency(build_knn_graph(rng.normal(size=(5, 2)), 2))
        x = Tensor(rng.normal(size=(5, 3)))
        assert grad_check(lambda w: T.sum(T.square(gcn_layer(adj, x, w))), rng.normal(size=(3, 2))) < 1e-5


class TestFusion:
    def test_identical_inputs(self):
        m = Tensor(np.random.default_rng(0).normal(size=(3, 2)))
        a, b = fuse_representations(m, m, m, 0.4, 0.2)
        np.testing.assert_allclose(a.data, m.data, atol=1e-15)
        np.testing.assert_allclose(b.data, m.data, atol=1e-15)

    def test_linearity(self):
        ones, zeros = Tensor(np.ones((2, 2))), Tensor(np.zeros((2, 2)))
        a, b = fuse_representations(ones, zeros, zeros, 0.4, 0.2)
        np.testing.assert_allclose(a.data, np.full((2, 2), 0.4), atol=1e-15)
        np.testing.assert_allclose(b.data, np.full((2, 2), 0.2), atol=1e-15)

    @pytest.mark.parametrize("sigma, gamma", [(-0.1, 0.2), (0.4, -0.2), (0.7, 0.5)])
    def test_bad_coefficients(self, sigma, gamma):
        m = Tensor(np.ones((2, 2)))
        with pytest.raises(ConfigError):
            fuse_representations(m, m, m, sigma, gamma)


class TestTridentForward:
    def test_rows_stochastic(self):
        model, z = small_model()
        out = trident_forward(model, z)
        for g in (out.gs_a, out.gs_b):
            np.testing.assert_allclose(g.data.sum(axis=1), 1.0, atol=1e-9)
        assert out.z_hat.shape == z.shape
        assert [h.shape[1] for h in out.hidden] == [8, 7, 3]

    def test_symmetric_streams_bitwise(self):
        model, z = small_model()
        model.adj_b = model.adj_a
        for wa, wb in zip(model.stream_a.weights, model.stream_b.weights):
            wb.data = wa.data.copy()
        out = trident_forward(model, z)
        assert out.gs_a.data.tobytes() == out.gs_b.data.tobytes()

    def test_sigma_one_ignores_encoder(self):
        model, z = small_model(SMALL.replace(sigma=1.0, gamma=0.0))
        before = trident_forward(model, z).gs_a.data
        for layer in model.autoencoder.encoder:
            layer.weight.data = layer.weight.data * 3.0
        np.testing.assert_array_equal(trident_forward(model, z).gs_a.data, before)

    def test_single_stream(self):
        model, z = small_model(SMALL.replace(streams="single"))
        out = trident_forward(model, z)
        assert out.gs_b is None and out.logits_b is None
        assert "mgcn.stream_b.W0" not in {p.name for p in model.parameters()}

    def test_l2_gradients(self):
        model, z = small_model()
        # P is a constant of each step, so it is frozen while differencing
        frozen = phase2_objective(model, z).target
        err = grad_check_params(lambda: phase2_objective(model, z, target=frozen).total, model.parameters())
        assert err < 1e-5


class TestReconstruction:
    def test_perfect(self):
        z = np.random.default_rng(0).normal(size=(4, 3))
        assert mgcn_reconstruction_loss(z, Tensor(z)).item() == 0.0

    def test_hand_value(self):
        assert mgcn_reconstruction_loss(np.zeros((2, 1)), Tensor(np.ones((2, 1)))).item() == 1.0

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            mgcn_reconstruction_loss(np.zeros((2, 1)), Tensor(np.ones((2, 2))))


class TestStudentT:
    def test_equidistant(self):
        q = student_t_assignment(Tensor([[0.0, 0.0]]), Tensor([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])).data
        np.testing.assert_allclose(q, np.full((1, 3), 1 / 3), atol=1e-15)

    def test_hand_value(self):
        q = student_t_assignment(Tensor([[0.0]]), Tensor([[0.0], [1.0]]), t_dof=1.0).data
        np.testing.assert_allclose(q, [[2 / 3, 1 / 3]], atol=1e-15)

    def test_monotone(self):
        centers = Tensor([[0.0, 0.0], [3.0, 0.0]])
        values = [student_t_assignment(Tensor([[x, 0.0]]), centers).data[0, 0] for x in (0.0, 0.5, 1.0, 1.4)]
        assert all(a > b for a, b in zip(values, values[1:]))

    @pytest.mark.parametrize("t", [0.5, 1.0, 2.0])
    def test_matches_bruteforce(self, t):
        rng = np.random.default_rng(int(t * 10))
        h, c = rng.normal(size=(5, 3)), rng.normal(size=(3, 3))
        expected = np.array(oracles.student_t(h.tolist(), c.tolist(), t))
        np.testing.assert_allclose(student_t_assignment(Tensor(h), Tensor(c), t).data, expected, atol=1e-12)

    def test_gradient(self):
        rng = np.random.default_rng(2)
        c = Tensor(rng.normal(size=(3, 2)))
        w = Tensor(rng.normal(size=(4, 3)))
        assert grad_check(lambda h: T.sum(T.mul(student_t_assignment(h, c), w)), rng.normal(size=(4, 2))) < 1e-5


class TestTargetDistribution:
    def test_identical_rows_fixed_point(self):
        q = np.tile([[0.2, 0.5, 0.3]], (4, 1))
        np.testing.assert_allclose(target_distribution(q).p, q, atol=1e-15)

    def test_one_hot_fixed_point(self):
        q = np.eye(3)[[0, 1, 2, 1]]
        assert np.array_equal(target_distribution(q).p, q)

    def test_hand_value(self):
        out = target_distribution(np.array([[0.6, 0.4], [0.5, 0.5]]))
        np.testing.assert_allclose(out.freq, [1.1, 0.9], atol=1e-15)
        np.testing.assert_allclose(out.p[0], [0.648, 0.352], atol=5e-6)

    def test_zero_column(self):
        with pytest.raises(DegenerateInputError):
            target_distribution(np.array([[1.0, 0.0], [1.0, 0.0]]))

    def test_matches_bruteforce(self):
        q = stochastic(np.random.default_rng(3), 6, 3)
        np.testing.assert_allclose(target_distribution(q).p, oracles.target(q.tolist()), atol=1e-12)


class TestKl:
    def test_equal(self):
        p = stochastic(np.random.default_rng(0), 4, 3)
        assert abs(kl_divergence(p, p).item()) < 1e-12

    def test_hand_value(self):
        assert kl_divergence(np.array([[1.0, 0.0]]), np.array([[0.5, 0.5]])).item() == pytest.approx(math.log(2), abs=1e-12)

    def test_support_violation(self):
        with pytest.raises(DomainError):
            kl_divergence(np.array([[0.5, 0.5]]), np.array([[1.0, 0.0]]))

    def test_nonnegative_on_random_pairs(self):
        rng = np.random.default_rng(4)
        for _ in range(1000):
            p, r = stochastic(rng, 2, 3), stochastic(rng, 2, 3)
            assert kl_divergence(p, r).item() >= -1e-12

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_matches_bruteforce(self, seed):
        rng = np.random.default_rng(seed)
        p, r = stochastic(rng, 3, 4), stochastic(rng, 3, 4)
        assert abs(kl_divergence(p, r).item() - oracles.kl(p.tolist(), r.tolist())) < 1e-9

    def test_logits_route_agrees(self):
        rng = np.random.default_rng(5)
        p, logits = stochastic(rng, 4, 3), rng.normal(size=(4, 3))
        direct = kl_divergence(p, T.row_softmax(Tensor(logits))).item()
        assert kl_divergence_logits(p, Tensor(logits)).item() == pytest.approx(direct, abs=1e-12)
        expected = oracles.kl(p.tolist(), oracles.softmax_rows(logits.tolist()))
        assert abs(direct - expected) < 1e-9

    def test_gradients(self):
        rng = np.random.default_rng(6)
        p = stochastic(rng, 4, 3)
        assert grad_check(lambda x: kl_divergence(p, T.row_softmax(x)), rng.normal(size=(4, 3))) < 1e-5
        assert grad_check(lambda x: kl_divergence_logits(p, x), rng.normal(size=(4, 3))) < 1e-5


class TestL2Total:
    def test_zero(self):
        assert l2_total(0.0, 0.0, 0.0, 0.0, 0.1, 0.1, 0.1) == 0.0

    def test_zero_weights(self):
        assert l2_total(0.7, 5.0, 3.0, 2.0, 0.0, 0.0, 0.0) == 0.7

    def test_hand_value(self):
        assert l2_total(1.0, 0.5, 0.2, 0.3, 0.1, 0.1, 0.1) == pytest.approx(1.10, abs=1e-12)


class TestKmeansInit:
    def test_exact_locations(self):
        locs = np.array([[0.0, 0.0], [5.0, 5.0], [-4.0, 3.0]])
        pts = np.repeat(locs, 4, axis=0)
        centers = kmeans_init_centers(pts, 3, seed=0)
        assert sorted(map(tuple, centers)) == sorted(map(tuple, locs))

    def test_deterministic(self):
        pts = np.random.default_rng(0).normal(size=(30, 3))
        assert kmeans_init_centers(pts, 3, 7).tobytes() == kmeans_init_centers(pts, 3, 7).tobytes()

    def test_matches_exhaustive_partition(self):
        rng = np.random.default_rng(1)
        pts = np.vstack([rng.normal(0, 0.3, (6, 2)), rng.normal(4, 0.3, (6, 2))])
        _, _, inertia = kmeans(pts, 2, seed=0)
        best = min(
            oracles.inertia(pts.tolist(), labels, 2)
            for labels in itertools.product((0, 1), repeat=12)
            if 0 < sum(labels) < 12
        )
        assert inertia == pytest.approx(best, abs=1e-9)

    def test_empty_cluster_reseeded(self):
        # three identical points and one outlier: k=2 must still place a center on the outlier
        pts = np.array([[0.0], [0.0], [0.0], [10.0]])
        centers = np.sort(kmeans_init_centers(pts, 2, seed=0).ravel())
        assert centers.tolist() == [0.0, 10.0]


class TestAssign:
    def test_one_hot(self):
        g = np.eye(3)[[2, 0, 1]]
        assert assign_clusters(g, g).tolist() == [2, 0, 1]

    def test_uniform_ties(self):
        g = np.full((3, 4), 0.25)
        assert assign_clusters(g, g).tolist() == [0, 0, 0]

    def test_disagreeing_streams(self):
        assert assign_clusters(np.array([[0.7, 0.3]]), np.array([[0.1, 0.9]])).tolist() == [1]


class TestTraining:
    def test_zero_lr_keeps_state(self):
        model, z = small_model(SMALL.replace(lr=0.0))
        before = [p.data.copy() for p in model.parameters()]
        train_phase2(model, z)
        for p, b in zip(model.parameters(), before):
            assert p.data.tobytes() == b.tobytes(), p.name

    def test_deterministic_trajectory(self):
        runs = []
        for _ in range(2):
            model, z = small_model()
            runs.append([r.total for r in train_phase2(model, z)])
        assert runs[0] == runs[1]

    def test_rows_stay_stochastic(self):
        model, z = small_model()
        reports = train_phase2(model, z)
        assert sum(r.rowsum_violations for r in reports) == 0

    def test_symmetric_streams_equal_kl(self):
        model, z = small_model(SMALL.replace(sigma=1.0, gamma=0.0))
        model.adj_b = model.adj_a
        for wa, wb in zip(model.stream_a.weights, model.stream_b.weights):
            wb.data = wa.data.copy()
        for r in train_phase2(model, z):
            assert r.kl_a == r.kl_b

    def test_mean_and_sum_reductions(self):
        model, z = small_model(SMALL.replace(kl_reduction="sum"))
        summed = phase2_objective(model, z)
        model.config = model.config.replace(kl_reduction="mean")
        mean = phase2_objective(model, z)
        assert mean.kl_a.item() == pytest.approx(summed.kl_a.item() / len(z), rel=1e-12)
        assert mean.cluster.item() == pytest.approx(summed.cluster.item() / len(z), rel=1e-12)
