"""Kernel generation, dynamic correlation and heatmap fusion."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

import oracles
from rccf.core import functional as F
from rccf.core.tensor import Tensor
from rccf.correlation import (ConcatFusion, KernelGenerator, correlate, correlate_and_fuse,
                              fuse_maps, generate_kernels)
from rccf.errors import ConfigError, ShapeError

# sigmoid saturates to exactly 1.0 in float64 beyond ~37, so property tests
# on the open interval use pre-activations of moderate size
maps_3 = hnp.arrays(np.float64, (3, 4, 5), elements=st.floats(-30, 30))


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


class TestCorrelationOracle:
    def test_one_by_one_equals_pixel_dot_product(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            c, h, w = rng.integers(1, 9), rng.integers(1, 10), rng.integers(1, 10)
            kernel, features = rng.normal(size=(c, 1, 1)), rng.normal(size=(c, h, w))
            got = correlate(Tensor(kernel), Tensor(features)).data
            np.testing.assert_allclose(got, oracles.pixel_dot(kernel[:, 0, 0], features),
                                       rtol=0, atol=1e-12)

    def test_three_by_three_equals_padded_convolution(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            kernel, features = rng.normal(size=(4, 3, 3)), rng.normal(size=(4, 6, 7))
            got = correlate(Tensor(kernel), Tensor(features)).data
            expected = oracles.conv2d_loops(features, kernel[None], padding=1)[0]
            np.testing.assert_allclose(got, expected, atol=1e-12)
            assert got.shape == features.shape[1:]

    def test_per_sample_kernels(self):
        rng = np.random.default_rng(2)
        kernels, features = rng.normal(size=(3, 5, 1, 1)), rng.normal(size=(3, 5, 4, 4))
        out = correlate(Tensor(kernels), Tensor(features)).data
        for n in range(3):
            np.testing.assert_allclose(out[n], oracles.pixel_dot(kernels[n, :, 0, 0], features[n]),
                                       atol=1e-12)

    def test_linear_in_kernel(self):
        rng = np.random.default_rng(3)
        k, e = rng.normal(size=(6, 3, 3)), rng.normal(size=(6, 5, 5))
        np.testing.assert_allclose(correlate(Tensor(2 * k), Tensor(e)).data,
                                   2 * correlate(Tensor(k), Tensor(e)).data, atol=1e-12)

    def test_zero_kernel_gives_zero_map(self):
        e = np.random.default_rng(4).normal(size=(6, 5, 5))
        assert not correlate(Tensor(np.zeros((6, 1, 1))), Tensor(e)).data.any()

    def test_channel_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            correlate(Tensor(np.zeros((4, 1, 1))), Tensor(np.zeros((3, 5, 5))))
        with pytest.raises(ShapeError):
            F.correlate(Tensor(np.zeros((2, 4, 1, 1))), Tensor(np.zeros((3, 4, 5, 5))))


class TestKernelGeneration:
    def test_one_by_one_shapes(self):
        gen = KernelGenerator(np.random.default_rng(0), lang_dim=32, channels=8)
        ks = generate_kernels(Tensor(np.ones(32)), gen)
        assert [k.shape for k in ks.kernels] == [(8, 1, 1)] * 3

    def test_three_by_three_maps_are_nine_times_wider(self):
        gen = KernelGenerator(np.random.default_rng(0), 32, 8, kernel_size=3)
        assert all(m.weight.shape == (72, 32) for m in gen.maps)
        ks = gen(Tensor(np.ones((2, 32))))
        assert [k.shape for k in ks.kernels] == [(2, 8, 3, 3)] * 3

    def test_zero_feature_gives_bias(self):
        gen = KernelGenerator(np.random.default_rng(1), 6, 4)
        for m in gen.maps:
            m.bias.data[:] = np.arange(4) + 0.5
        for k in gen(Tensor(np.zeros(6))).kernels:
            np.testing.assert_array_equal(k.data[:, 0, 0], np.arange(4) + 0.5)

    def test_levels_get_different_kernels(self):
        gen = KernelGenerator(np.random.default_rng(2), 6, 4)
        ks = gen(Tensor(np.ones(6))).kernels
        assert np.abs(ks[0].data - ks[1].data).max() > 1e-6

    def test_single_mode_shares_one_kernel(self):
        gen = KernelGenerator(np.random.default_rng(3), 6, 4, mode="single")
        assert len(gen.maps) == 1
        ks = gen(Tensor(np.ones(6))).kernels
        assert all(np.array_equal(k.data, ks[0].data) for k in ks)

    def test_single_mode_with_identical_levels_gives_identical_maps(self):
        rng = np.random.default_rng(4)
        gen = KernelGenerator(rng, 6, 4, mode="single")
        level = Tensor(rng.normal(size=(4, 5, 5)))
        out = correlate_and_fuse(gen(Tensor(rng.normal(size=6))), [level] * 3)
        for m in out.per_level[1:]:
            np.testing.assert_array_equal(m.data, out.per_level[0].data)

    def test_dimension_mismatch_rejected(self):
        gen = KernelGenerator(np.random.default_rng(0), 6, 4)
        with pytest.raises(ShapeError):
            gen(Tensor(np.ones(5)))

    def test_bad_options_rejected(self):
        with pytest.raises(ConfigError):
            KernelGenerator(np.random.default_rng(0), 6, 4, kernel_size=5)
        with pytest.raises(ConfigError):
            KernelGenerator(np.random.default_rng(0), 6, 4, mode="shared")


class TestFusion:
    def test_identical_maps_average(self):
        m = np.random.default_rng(0).normal(size=(4, 4))
        np.testing.assert_allclose(fuse_maps([m, m, m], "average").data, sigmoid(m), atol=1e-15)

    def test_zero_maps_give_half(self):
        for strategy in ("average", "max", "concat"):
            out = fuse_maps([np.zeros((2, 3))] * 3, strategy, ConcatFusion(3)).data
            np.testing.assert_array_equal(out, 0.5)

    def test_each_strategy_against_numpy(self):
        rng = np.random.default_rng(1)
        maps = rng.normal(size=(3, 2, 4, 4))
        fusion = ConcatFusion(3)
        fusion.weight.data = np.array([0.2, -0.7, 1.1]).reshape(1, 3, 1, 1)
        fusion.bias.data = np.array([0.3])
        cases = {
            "average": maps.mean(axis=0),
            "max": maps.max(axis=0),
            "concat": np.tensordot([0.2, -0.7, 1.1], maps, axes=1) + 0.3,
        }
        for strategy, pre in cases.items():
            got = fuse_maps(list(maps), strategy, fusion).data
            np.testing.assert_allclose(got, sigmoid(pre), atol=1e-14)

    @settings(max_examples=60, deadline=None)
    @given(maps=maps_3, strategy=st.sampled_from(["average", "max", "concat"]))
    def test_output_in_open_unit_interval(self, maps, strategy):
        out = fuse_maps(list(maps), strategy, ConcatFusion(3)).data
        assert np.all(out > 0) and np.all(out < 1)

    @settings(max_examples=60, deadline=None)
    @given(maps=maps_3)
    def test_average_never_exceeds_max(self, maps):
        avg = fuse_maps(list(maps), "average").data
        mx = fuse_maps(list(maps), "max").data
        assert np.all(avg <= mx)

    @settings(max_examples=60, deadline=None)
    @given(seed=st.integers(0, 2**31), scale=st.floats(0.1, 10), shift=st.floats(-5, 5))
    def test_argmax_survives_common_positive_affine_map(self, seed, scale, shift):
        maps = np.random.default_rng(seed).normal(size=(3, 5, 6))
        a = fuse_maps(list(maps), "average").data
        b = fuse_maps(list(maps * scale + shift), "average").data
        assert np.argmax(a) == np.argmax(b)

    def test_concat_requires_weights(self):
        with pytest.raises(ConfigError):
            fuse_maps([np.zeros((2, 2))] * 3, "concat")

    def test_unknown_strategy(self):
        with pytest.raises(ConfigError):
            fuse_maps([np.zeros((2, 2))] * 3, "median")

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            fuse_maps([np.zeros((2, 2)), np.zeros((2, 3)), np.zeros((2, 2))])
