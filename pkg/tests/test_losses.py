import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_force_w1
from pvgan import autodiff as ad
from pvgan import gradcheck as gc
from pvgan import losses as lo
from pvgan.autodiff import Graph
from pvgan.rng import stream
from pvgan.tensor import ShapeError

BIG = 50.0  # logit that the sigmoid maps to 1 within 2e-22

samples = st.lists(st.floats(-100, 100, allow_nan=False), min_size=1, max_size=16)


def _lrelu(z, slope=0.2):
    return np.where(z >= 0, z, slope * z)


class TestClassicLosses:
    def test_gan_perfect_discriminator(self):
        loss_d, _ = lo.gan_loss(np.full(4, BIG), np.full(4, -BIG))
        assert loss_d == pytest.approx(0.0, abs=1e-12)

    def test_gan_half(self):
        loss_d, loss_g = lo.gan_loss(np.zeros(3), np.zeros(3))
        assert loss_d == pytest.approx(2 * math.log(2), rel=1e-14)
        assert loss_g == pytest.approx(math.log(2), rel=1e-14)

    def test_gan_generator_fooling(self):
        _, loss_g = lo.gan_loss(np.zeros(2), np.full(2, BIG))
        assert loss_g == pytest.approx(0.0, abs=1e-12)

    def test_gan_clamped_is_finite(self):
        loss_d, loss_g = lo.gan_loss(np.full(2, -1e4), np.full(2, 1e4))
        assert loss_d == pytest.approx(-2 * math.log(1e-12), rel=1e-12)
        assert np.isfinite(loss_g)

    def test_feature_matching(self, rng):
        f = rng.standard_normal((5, 3))
        assert lo.feature_matching_loss(f, f) == 0.0
        assert lo.feature_matching_loss(np.zeros((4, 1)), np.ones((4, 1))) == 1.0
        a, b = rng.standard_normal((2, 6, 4))
        want = sum((a[:, j].mean() - b[:, j].mean()) ** 2 for j in range(4))
        assert lo.feature_matching_loss(a, b) == pytest.approx(want, rel=1e-13)

    def test_wgan(self, rng):
        x = rng.standard_normal(5)
        assert lo.wgan_loss(x, x[::-1])[0] == pytest.approx(0.0, abs=1e-15)
        assert lo.wgan_loss(np.ones(3), np.zeros(3)) == (-1.0, -0.0)
        a, b = rng.standard_normal((2, 7))
        assert lo.wgan_loss(a + 3.3, b + 3.3)[0] == pytest.approx(lo.wgan_loss(a, b)[0], abs=1e-14)

    def test_clip_weights(self):
        g = Graph()
        g.param("D/w", np.array([2.0, -0.005, -3.0]))
        g.param("G/w", np.array([2.0]))
        lo.clip_weights(g, 0.01, prefix="D/")
        np.testing.assert_array_equal(g.param_values["D/w"], [0.01, -0.005, -0.01])
        np.testing.assert_array_equal(g.param_values["G/w"], [2.0])
        before = g.param_values["D/w"].copy()
        lo.clip_weights(g, 0.01, prefix="D/")
        np.testing.assert_array_equal(g.param_values["D/w"], before)
        with pytest.raises(ValueError):
            lo.clip_weights(g, 0.0)


class TestGradientPenalty:
    def _setup(self, rng, critic_builder, n=4, d=3):
        g = Graph()
        xr, xf, u = g.input("xr"), g.input("xf"), g.input("u")
        pen = lo.gradient_penalty(critic_builder(g), xr, xf, u, target=1.0)
        feed = {xr: rng.standard_normal((n, d)), xf: rng.standard_normal((n, d)), u: rng.uniform(size=(n, 1))}
        return g, pen, feed

    def test_linear_unit_norm_critic(self, rng):
        w = rng.standard_normal((1, 3))
        w /= np.linalg.norm(w)
        g, pen, feed = self._setup(rng, lambda g: (lambda x: ad.dense(x, g.const(w))))
        for _ in range(3):
            feed[g.inputs["u"]] = rng.uniform(size=(4, 1))
            assert g.forward([pen], feed)[0] == pytest.approx(0.0, abs=1e-14)

    def test_constant_critic(self, rng):
        g, pen, feed = self._setup(rng, lambda g: (lambda x: ad.scale(ad.sum_(x, axes="rest", keepdims=True), 0.0)))
        assert g.forward([pen], feed)[0] == pytest.approx(1.0, abs=1e-15)

    def test_small_net_vs_fd_oracle(self, rng):
        w1, w2 = rng.standard_normal((4, 3)), rng.standard_normal((1, 4))
        g, pen, feed = self._setup(
            rng, lambda g: (lambda x: ad.dense(ad.sigmoid(ad.dense(x, g.param("w1", w1))), g.param("w2", w2))))
        xr, xf, u = (feed[g.inputs[k]] for k in ("xr", "xf", "u"))
        d = lambda x: float((w2 @ (1 / (1 + np.exp(-(w1 @ x)))))[0])
        x_hat = u * xr + (1 - u) * xf
        norms = []
        for row in x_hat:
            grad = [(d(row + e) - d(row - e)) / 2e-6 for e in np.eye(3) * 1e-6]
            norms.append(np.linalg.norm(grad))
        want = np.mean((np.array(norms) - 1.0) ** 2)
        assert g.forward([pen], feed)[0] == pytest.approx(want, rel=1e-6)
        res = gc.check_first_order(pen, [g.params["w1"], g.params["w2"]], feed, probes=50)
        assert res.passed(1e-4)


class TestExactWD:
    def test_examples(self, rng):
        x = rng.standard_normal(6)
        assert lo.exact_wd_1d(x, x[::-1]) == 0.0
        assert lo.exact_wd_1d([0.0], [1.0]) == 1.0
        with pytest.raises(ShapeError):
            lo.exact_wd_1d(np.zeros(2), np.zeros(3))

    @pytest.mark.parametrize("n", range(1, 8))
    def test_brute_force(self, rng, n):
        for _ in range(5):
            x, y = rng.standard_normal((2, n))
            assert abs(lo.exact_wd_1d(x, y) - brute_force_w1(x, y)) <= 1e-12

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 16), st.integers(0, 10_000))
    def test_metric_axioms(self, n, seed):
        x, y, z = np.random.default_rng(seed).standard_normal((3, n))
        assert lo.exact_wd_1d(x, y) == lo.exact_wd_1d(y, x)
        assert lo.exact_wd_1d(x, x) == 0.0
        assert lo.exact_wd_1d(x, z) <= lo.exact_wd_1d(x, y) + lo.exact_wd_1d(y, z) + 1e-12
        if not np.array_equal(np.sort(x), np.sort(y)):
            assert lo.exact_wd_1d(x, y) > 0

    @settings(max_examples=40, deadline=None)
    @given(samples, st.floats(-10, 10))
    def test_translation(self, xs, c):
        x = np.array(xs)
        y = x[::-1] * 0.5
        assert lo.exact_wd_1d(x + c, y + c) == pytest.approx(lo.exact_wd_1d(x, y), abs=1e-9)
        assert lo.exact_wd_1d(x + c, x) <= abs(c) + 1e-9
        assert lo.exact_wd_1d([xs[0] + c], [xs[0]]) == pytest.approx(abs(c), abs=1e-12)


class TestSWD:
    def test_identical(self, rng):
        x = rng.standard_normal((10, 3))
        assert lo.swd(x, x[::-1].copy(), 16) == 0.0

    def test_k1_identity_reduces(self, rng):
        x, y = rng.standard_normal((2, 9, 1))
        assert lo.swd(x, y, np.eye(1)) == lo.exact_wd_1d(x.ravel(), y.ravel())

    def test_projection_set_uses_theta(self, rng):
        x, y = rng.standard_normal((2, 12, 4))
        p = lo.ProjectionSet.random(4, seed=2)
        want = np.mean([lo.exact_wd_1d(x @ p.theta[:, i], y @ p.theta[:, i]) for i in range(4)])
        assert lo.swd(x, y, p) == pytest.approx(want, rel=1e-14)

    def test_width_mismatch(self):
        with pytest.raises(ShapeError):
            lo.swd(np.zeros((3, 2)), np.zeros((3, 3)))

    def test_dense_slicing_oracle(self):
        # N(0, I) vs N((1, 0), I): Monte Carlo over directions vs a dense angular grid
        r = stream(7, "test", "swd")
        n = 2000
        x = r.standard_normal((n, 2))
        y = r.standard_normal((n, 2)) + np.array([1.0, 0.0])
        angles = np.linspace(0, np.pi, 3600, endpoint=False)  # W1 is symmetric under theta -> -theta
        dense = np.mean([lo.exact_wd_1d(x @ [np.cos(a), np.sin(a)], y @ [np.cos(a), np.sin(a)]) for a in angles])
        k = 256
        dirs = lo.random_directions(2, k, stream(7, "test", "dirs"))
        per_dir = [lo.exact_wd_1d(x @ dirs[:, i], y @ dirs[:, i]) for i in range(k)]
        mc = lo.swd(x, y, dirs)
        assert mc == pytest.approx(np.mean(per_dir), rel=1e-12)
        se = np.std(per_dir, ddof=1) / math.sqrt(k)
        assert abs(mc - dense) <= 3 * se
        assert dense == pytest.approx(2 / math.pi, abs=0.05)  # population value E|cos|

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000))
    def test_nonnegative(self, seed):
        x, y = np.random.default_rng(seed).standard_normal((2, 6, 3))
        assert lo.swd(x, y, 8, seed=seed) >= 0

    def test_node_matches_numeric(self, rng):
        x, y = rng.standard_normal((2, 7, 3))
        dirs = lo.random_directions(3, 5, rng)
        g = Graph()
        node = lo.swd_node(g.input("x"), g.input("y"), g.input("d"))
        assert g.forward([node], {"x": x, "y": y, "d": dirs})[0] == pytest.approx(lo.swd(x, y, dirs), rel=1e-14)

    def test_random_directions_unit_and_frames(self, rng):
        d = lo.random_directions(3, 7, rng)
        assert d.shape == (3, 7)
        np.testing.assert_allclose(np.linalg.norm(d, axis=0), 1.0, atol=1e-14)
        np.testing.assert_allclose(d[:, :3].T @ d[:, :3], np.eye(3), atol=1e-14)


class TestProjectionSet:
    def test_random_is_orthonormal(self):
        assert lo.ProjectionSet.random(6, seed=1).orthogonality_error() <= 1e-12

    def test_reorthonormalize_after_perturbation(self, rng):
        p = lo.ProjectionSet.random(5, seed=0)
        p.theta = p.theta + 0.1 * rng.standard_normal((5, 5))
        assert p.orthogonality_error() > 1e-3
        p.orthonormalize()
        assert p.orthogonality_error() <= 1e-6

    def test_gram_schmidt_matches_qr_up_to_sign(self, rng):
        a = rng.standard_normal((4, 4))
        q, _ = np.linalg.qr(a)
        gs = lo.gram_schmidt(a)
        np.testing.assert_allclose(np.abs(gs), np.abs(q), atol=1e-12)

    def test_shape_validation(self):
        with pytest.raises(ShapeError):
            lo.ProjectionSet(np.eye(3), np.ones(2), np.zeros(3))


def _critic_graph(proj, e):
    g = Graph()
    f = lo.projection_nodes(g, proj)
    node = lo.swgan_critic(lambda x: x, f, g.input("e"))
    return g.forward([node], {"e": e})[0]


class TestSWGANCritic:
    def test_zero_gain_and_bias(self, rng):
        p = lo.ProjectionSet(lo.random_orthogonal(3, rng), np.zeros(3), np.zeros(3))
        assert np.all(_critic_graph(p, rng.standard_normal((4, 3))) == 0)

    def test_k1_reduction(self, rng):
        e = rng.standard_normal((6, 1))
        p = lo.ProjectionSet(np.eye(1), np.ones(1), np.zeros(1))
        np.testing.assert_array_equal(_critic_graph(p, e), _lrelu(e.ravel()))

    def test_random_vs_loop_formula(self, rng):
        k = 4
        p = lo.ProjectionSet(lo.random_orthogonal(k, rng), rng.standard_normal(k), rng.standard_normal(k))
        e = rng.standard_normal((5, k))
        want = []
        for row in e:
            acc = 0.0
            for i in range(k):
                z = p.lambdas[i] * sum(p.theta[j, i] * row[j] for j in range(k)) + p.biases[i]
                acc += z if z >= 0 else 0.2 * z
            want.append(acc / k)
        np.testing.assert_allclose(_critic_graph(p, e), want, rtol=1e-13)
        np.testing.assert_allclose(lo.swgan_critic_value(e, p), want, rtol=1e-13)

    def test_permutation_invariance(self, rng):
        k = 5
        p = lo.ProjectionSet(lo.random_orthogonal(k, rng), rng.standard_normal(k), rng.standard_normal(k))
        perm = rng.permutation(k)
        q = lo.ProjectionSet(p.theta[:, perm], p.lambdas[perm], p.biases[perm])
        e = rng.standard_normal((4, k))
        np.testing.assert_allclose(_critic_graph(p, e), _critic_graph(q, e), rtol=1e-14)

    def test_k_mismatch(self, rng):
        with pytest.raises(ShapeError):
            lo.swgan_critic_value(np.zeros((2, 3)), lo.ProjectionSet.random(4))


class TestSWGANObjective:
    def _build(self, rng, cfg, proj=None, n=5, d=3, k=4):
        g = Graph()
        w1, w2 = rng.standard_normal((k, d)), rng.standard_normal((k, k))
        enc = lambda x: ad.dense(ad.leaky_relu(ad.dense(x, g.param("w1", w1)), 0.2), g.param("w2", w2))
        proj = proj or lo.ProjectionSet(lo.random_orthogonal(k, rng), rng.uniform(0.5, 1.5, k), rng.standard_normal(k))
        f = lo.projection_nodes(g, proj)
        names = ("xr", "xf", "ux", "uy")
        xr, xf, ux, uy = (g.input(nm) for nm in names)
        terms = lo.swgan_objective(enc, f, xr, xf, ux, uy, cfg)
        feed = {xr: rng.standard_normal((n, d)), xf: rng.standard_normal((n, d)),
                ux: rng.uniform(size=(n, 1)), uy: rng.uniform(size=(n, 1))}
        return g, terms, feed, (w1, w2, proj)

    def test_no_penalties_reduces_to_wgan(self, rng):
        g, t, feed, (w1, w2, proj) = self._build(rng, lo.LossConfig(lambda1=0, lambda2=0))
        enc = lambda x: _lrelu(x @ w1.T) @ w2.T
        xr, xf = feed[g.inputs["xr"]], feed[g.inputs["xf"]]
        dr, df = lo.swgan_critic_value(enc(xr), proj), lo.swgan_critic_value(enc(xf), proj)
        want_d, want_g = lo.wgan_loss(dr, df)
        loss_d, loss_g = g.forward([t.loss_d, t.loss_g], feed)
        assert loss_d == pytest.approx(want_d, rel=1e-12) and loss_g == pytest.approx(want_g, rel=1e-12)

    def test_penalties_vs_fd_oracle(self, rng):
        g, t, feed, (w1, w2, proj) = self._build(rng, lo.LossConfig())
        xr, xf = feed[g.inputs["xr"]], feed[g.inputs["xf"]]
        ux, uy = feed[g.inputs["ux"]], feed[g.inputs["uy"]]
        enc = lambda x: _lrelu(x @ w1.T) @ w2.T
        fmap = lambda y: lo.swgan_critic_value(y[None, :], proj)[0]

        def fd(fun, x, eps=1e-6):
            return np.array([(fun(x + e) - fun(x - e)) / (2 * eps) for e in np.eye(len(x)) * eps])

        x_hat = ux * xr + (1 - ux) * xf
        enc_want = np.mean([np.sum(fd(lambda v: enc(v[None, :]).sum(), row) ** 2) for row in x_hat])
        y_hat = uy * enc(xr) + (1 - uy) * enc(xf)
        lip_want = np.mean([(np.linalg.norm(fd(fmap, row)) - 1.0) ** 2 for row in y_hat])
        enc_got, lip_got = g.forward([t.encoder_penalty, t.lipschitz_penalty], feed)
        assert enc_got == pytest.approx(enc_want, rel=1e-6)
        assert lip_got == pytest.approx(lip_want, rel=1e-6)

    def test_linear_f_matching_k_zeroes_lipschitz_penalty(self, rng):
        k = 4
        # large biases keep every pre-activation positive, so f is affine with gradient
        # (1/K) sum_i lambda_i theta_i, of norm sqrt(sum lambda_i^2) / K
        lam = np.full(k, math.sqrt(k) * 1.0)
        proj = lo.ProjectionSet(lo.random_orthogonal(k, rng), lam, np.full(k, 1e3))
        g, t, feed, _ = self._build(rng, lo.LossConfig(k_lipschitz=1.0), proj=proj, k=k)
        assert g.forward([t.lipschitz_penalty], feed)[0] == pytest.approx(0.0, abs=1e-20)

    def test_data_space_y_hat(self, rng):
        g, t, feed, _ = self._build(rng, lo.LossConfig(y_hat_space="data"))
        assert np.isfinite(g.forward([t.loss_d], feed)[0])

    def test_penalty_gradients_second_order(self, rng):
        g, t, feed, _ = self._build(rng, lo.LossConfig())
        wrt = [g.params[n] for n in ("w1", "w2", "F/lambda", "F/bias")]
        assert gc.check_first_order(t.loss_d, wrt, feed, probes=50).passed(1e-4)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            lo.LossConfig(kind="nope")
        with pytest.raises(ValueError):
            lo.LossConfig(lambda1=-1)
        with pytest.raises(ValueError):
            lo.LossConfig(clip_bound=0)
        with pytest.raises(ValueError):
            lo.LossConfig(y_hat_space="latent")
