import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import naive_minibatch_stddev, naive_pixel_norm
from pvgan import autodiff as ad
from pvgan import gradcheck as gc
from pvgan import layers as L
from pvgan.autodiff import Graph
from pvgan.progressive import DEFAULT_LADDER
from pvgan.tensor import Shape3d, ShapeError


class TestPixelNorm:
    def test_all_ones(self):
        out = L.pixel_norm(np.ones((1, 4, 1, 1, 1)), 1e-8)
        np.testing.assert_allclose(out, 1 / np.sqrt(1 + 1e-8), rtol=0, atol=1e-15)

    def test_three_four(self):
        out = L.pixel_norm(np.array([3.0, 4.0]).reshape(1, 2, 1, 1, 1), 1e-8).ravel()
        np.testing.assert_allclose(out, [3 / np.sqrt(12.5), 4 / np.sqrt(12.5)], rtol=1e-9)
        np.testing.assert_allclose(out, [0.84853, 1.13137], atol=5e-6)

    def test_zero_vector(self):
        assert np.all(L.pixel_norm(np.zeros((2, 3, 1, 2, 2))) == 0)

    def test_matches_loops(self, rng):
        a = rng.standard_normal((2, 3, 2, 2, 3))
        np.testing.assert_allclose(L.pixel_norm(a, 1e-3), naive_pixel_norm(a, 1e-3), rtol=0, atol=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000))
    def test_unit_mean_square(self, seed):
        a = np.random.default_rng(seed).standard_normal((2, 5, 2, 2, 2)) * 10
        ms = np.mean(L.pixel_norm(a, 0.0) ** 2, axis=1)
        np.testing.assert_allclose(ms, 1.0, rtol=0, atol=1e-12)
        assert np.all(np.mean(L.pixel_norm(a, 1e-8) ** 2, axis=1) <= 1 + 1e-8)

    def test_node_matches_kernel(self, rng):
        g = Graph()
        a = rng.standard_normal((2, 3, 2, 2, 2))
        (out,) = g.forward([L.pixel_norm_node(g.input("a"))], {"a": a})
        np.testing.assert_allclose(out, L.pixel_norm(a), rtol=0, atol=1e-14)


class TestMinibatchStddev:
    def test_identical_batch(self, rng):
        x = np.repeat(rng.standard_normal((1, 2, 2, 2, 2)), 3, axis=0)
        out = L.minibatch_stddev(x, eps=0.0)
        assert out.shape == (3, 3, 2, 2, 2) and np.all(out[:, -1] == 0)

    def test_zero_and_two(self):
        x = np.stack([np.zeros((2, 1, 2, 2)), np.full((2, 1, 2, 2), 2.0)])
        np.testing.assert_allclose(L.minibatch_stddev(x, eps=0.0)[:, -1], 1.0, rtol=0, atol=1e-15)

    def test_channel_count_and_constancy(self, rng):
        x = rng.standard_normal((4, 3, 2, 3, 2))
        out = L.minibatch_stddev(x)
        assert out.shape == (4, 4, 2, 3, 2)
        np.testing.assert_array_equal(out[:, :3], x)
        assert np.ptp(out[:, 3]) == 0

    def test_batch_of_one(self, rng):
        out = L.minibatch_stddev(rng.standard_normal((1, 2, 1, 1, 1)), eps=0.0)
        assert out[0, -1, 0, 0, 0] == 0

    def test_matches_loops_and_node(self, rng):
        x = rng.standard_normal((3, 2, 2, 2, 2))
        ref = naive_minibatch_stddev(x, 1e-8)
        np.testing.assert_allclose(L.minibatch_stddev(x), ref, rtol=0, atol=1e-12)
        g = Graph()
        (out,) = g.forward([L.minibatch_stddev_node(g.input("x"))], {"x": x})
        np.testing.assert_allclose(out, ref, rtol=0, atol=1e-12)


def _hand_count(base: int, rung_index: int) -> tuple[int, int]:
    """Parameter counts from the layer tables, written out long-hand."""
    full = [128, 128, 128, 64, 32, 16, 8]
    c = [max(2, f * base // 128) for f in full][: rung_index + 1]
    z = max(2, 128 * base // 128)
    conv = lambda cin, cout, k=3: cin * cout * k**3 + cout
    gen = z * c[0] * 64 + c[0] * 64 + conv(c[0], c[0])
    for k in range(1, rung_index + 1):
        gen += conv(c[k - 1], c[k]) + conv(c[k], c[k])
    gen += conv(c[-1], 3, 1)
    dis = conv(3, c[-1], 1)
    for k in range(rung_index, 0, -1):
        dis += conv(c[k], c[k]) + conv(c[k], c[k - 1])
    dis += conv(c[0] + 1, c[0]) + (c[0] * 64 * c[0] + c[0]) + (c[0] + 1)
    return gen, dis


class TestSpecs:
    def test_full_scale_count_about_3_7m(self):
        gs = L.generator_spec()
        n = L.count_parameters(gs, DEFAULT_LADDER[-1])
        assert round(n / 1e6, 1) == 3.7

    @pytest.mark.parametrize("rung_index", range(7))
    def test_scaled_counts_match_hand_sum(self, rung_index):
        gs = L.generator_spec(8)
        ds = L.discriminator_spec(gs)
        assert (L.count_parameters(gs, rung_index), L.count_parameters(ds, rung_index)) == _hand_count(8, rung_index)

    def test_channel_scaling_floor(self):
        gs = L.generator_spec(4)
        assert [gs.block_channels(k) for k in range(7)] == [4, 4, 4, 2, 2, 2, 2]
        assert gs.latent_dim == 4

    def test_json_roundtrip(self, tmp_path):
        gs = L.generator_spec(8, DEFAULT_LADDER[:3])
        gs.save(tmp_path / "g.json")
        assert L.NetworkSpec.load(tmp_path / "g.json") == gs
        ds = L.discriminator_spec(gs)
        assert L.NetworkSpec.from_json(ds.to_json()) == ds

    def test_heads_are_pointwise(self):
        gs = L.generator_spec(8)
        for spec in (gs, L.discriminator_spec(gs)):
            heads = [l for l in spec.layers if l.kind in ("to_rgb", "from_rgb")]
            assert len(heads) == 1 and heads[0].kernel == 1

    def test_mirror_structure(self):
        gs = L.generator_spec(8)
        ds = L.discriminator_spec(gs)
        for k in range(1, 7):
            g_convs = [l.channels for l in gs.block_layers(k) if l.kind == "conv3d"]
            d_convs = [l.channels for l in ds.block_layers(k) if l.kind == "conv3d"]
            assert g_convs == [gs.block_channels(k)] * 2
            assert d_convs == [gs.block_channels(k), gs.block_channels(k - 1)]

    def test_off_ladder_rung(self):
        gs = L.generator_spec(4, DEFAULT_LADDER[:2])
        with pytest.raises(ShapeError):
            L.build_generator(gs, Shape3d(8, 16, 16))


class TestNetworks:
    def test_generator_first_rung_shape(self, rng):
        gs = L.generator_spec(4)
        g = L.build_generator(gs, "4x4x4")
        (out,) = g.forward([g.outputs["out"]], {"z": rng.standard_normal((2, gs.latent_dim))})
        assert out.shape == (2, 3, 4, 4, 4)

    def test_generator_full_scale_first_rung(self, rng):
        gs = L.generator_spec()
        g = L.build_generator(gs, "4x4x4")
        (out,) = g.forward([g.outputs["out"]], {"z": rng.standard_normal((1, 128))})
        assert out.shape == (1, 3, 4, 4, 4)

    def test_discriminator_chain_at_8x16x16(self, rng):
        gs = L.generator_spec(8)
        ds = L.discriminator_spec(gs)
        g = L.build_discriminator(ds, "8x16x16")
        assert g.param_values["D/from_rgb2.w"].shape == (8, 3, 1, 1, 1)
        x = rng.standard_normal((3, 3, 8, 16, 16))
        score, feats = g.forward([g.outputs["out"], g.outputs["features"]], {"x": x})
        assert score.shape == (3, 1) and feats.shape == (3, 8)
        # trace extents through the downsample nodes
        downs = [i for i in range(len(g)) if g._ops[i] == "avg_pool3d"]
        shapes = [g._values[i].shape[2:] for i in downs]
        assert shapes == [(8, 8, 8), (4, 4, 4)]

    def test_generator_transition_shapes(self, rng):
        gs = L.generator_spec(4)
        g = L.build_generator(gs, "8x16x16", transition=True)
        feed = {"z": rng.standard_normal((2, gs.latent_dim)), "alpha": np.array(0.3)}
        assert g.forward([g.outputs["out"]], feed)[0].shape == (2, 3, 8, 16, 16)

    @pytest.mark.parametrize("role", ["generator", "discriminator"])
    def test_network_gradcheck(self, role):
        assert gc.check_network(role, probes=30).passed(1e-4)

    def test_composed_gan_is_differentiable(self, rng):
        gs = L.generator_spec(4)
        ds = L.discriminator_spec(gs)
        g = Graph()
        z = g.input("z")
        params = {**L.init_params(gs, 0), **L.init_params(ds, 0)}
        fake = L.apply_generator(g, gs, 0, z, params)
        score, _ = L.apply_discriminator(g, ds, 0, fake, params)
        out = ad.sum_(score)
        wrt = [z, g.params["G/b0/dense.w"], g.params["D/b0/conv0.w"]]
        res = gc.check_first_order(out, wrt, {z: rng.standard_normal((2, gs.latent_dim))}, probes=30)
        assert res.passed(1e-4)


class TestGrow:
    def _pair(self, rng):
        gs = L.generator_spec(4, DEFAULT_LADDER[:3])
        old = L.build_generator(gs, 1, seed=3)
        new = L.grow_network(old, gs, 2, seed=3)
        z = rng.standard_normal((2, gs.latent_dim))
        return gs, old, new, z

    def test_shared_params_copied_exactly(self, rng):
        _, old, new, _ = self._pair(rng)
        for name, val in old.param_values.items():
            np.testing.assert_array_equal(new.param_values[name], val)

    def test_count_grows_by_new_block(self, rng):
        gs, old, new, _ = self._pair(rng)
        c1, c2 = gs.block_channels(1), gs.block_channels(2)
        block = (c1 * c2 * 27 + c2) + (c2 * c2 * 27 + c2)
        head = 3 * c2 + 3
        assert L.graph_parameter_count(new) - L.graph_parameter_count(old) == block + head

    def test_alpha_zero_is_upsampled_old_output(self, rng):
        _, old, new, z = self._pair(rng)
        (a,) = old.forward([old.outputs["out"]], {"z": z})
        (b,) = new.forward([new.outputs["out"]], {"z": z, "alpha": np.array(0.0)})
        np.testing.assert_array_equal(b, np.kron(a, np.ones((1, 1, 1, 2, 2))))

    def test_alpha_one_is_plain_high_path(self, rng):
        gs, _, new, z = self._pair(rng)
        plain = L.build_generator(gs, 2, params=new.param_values)
        (a,) = plain.forward([plain.outputs["out"]], {"z": z})
        (b,) = new.forward([new.outputs["out"]], {"z": z, "alpha": np.array(1.0)})
        np.testing.assert_array_equal(a, b)

    def test_old_graph_unchanged(self, rng):
        _, old, _, z = self._pair(rng)
        (a,) = old.forward([old.outputs["out"]], {"z": z})
        (b,) = old.forward([old.outputs["out"]], {"z": z})
        np.testing.assert_array_equal(a, b)

    def test_discriminator_alpha_zero_uses_pooled_path(self, rng):
        gs = L.generator_spec(4, DEFAULT_LADDER[:2])
        ds = L.discriminator_spec(gs)
        old = L.build_discriminator(ds, 0, seed=1)
        new = L.grow_network(old, ds, 1, seed=1)
        x = rng.standard_normal((3, 3, 8, 8, 8))
        pooled = x.reshape(3, 3, 4, 2, 4, 2, 4, 2).mean(axis=(3, 5, 7))
        (a,) = old.forward([old.outputs["out"]], {"x": pooled})
        (b,) = new.forward([new.outputs["out"]], {"x": x, "alpha": np.array(0.0)})
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)


class TestMLP:
    def test_shapes_and_linear_last_layer(self, rng):
        p = L.init_mlp("M", [2, 5, 1], seed=0)
        assert p["M/fc0.w"].shape == (5, 2) and p["M/fc1.b"].shape == (1,)
        g = Graph()
        x = rng.standard_normal((4, 2))
        (out,) = g.forward([L.apply_mlp(g, "M", [2, 5, 1], g.input("x"), p)], {"x": x})
        h = x @ p["M/fc0.w"].T + p["M/fc0.b"]
        h = np.where(h >= 0, h, 0.2 * h)
        np.testing.assert_allclose(out, h @ p["M/fc1.w"].T + p["M/fc1.b"], rtol=0, atol=1e-13)

    def test_init_is_per_name(self):
        a = L.init_mlp("M", [2, 5, 1], seed=0)
        b = L.init_mlp("M", [2, 5, 3], seed=0)
        np.testing.assert_array_equal(a["M/fc0.w"], b["M/fc0.w"])
