"""Gaussian targets, the focal loss and the center-masked regression losses."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from rccf.core.tensor import Tensor
from rccf.errors import ShapeError
from rccf.targets import (GroundTruthBox, focal_loss, gaussian_radius, gaussian_sigma,
                          make_targets, regression_losses, total_loss)

sizes = st.floats(0.2, 60.0)


class TestGaussianRadius:
    def test_square_box_against_bisection(self):
        r = gaussian_radius(10.0, 10.0, 0.7)
        assert abs(r - oracles.radius_bisection(10.0, 10.0, 0.7)) < 1e-6
        assert gaussian_sigma(10.0, 10.0) == max(r / 3, 0.5)
        assert gaussian_sigma(40.0, 40.0) == pytest.approx(gaussian_radius(40.0, 40.0) / 3)

    @settings(max_examples=200, deadline=None)
    @given(w=sizes, h=sizes, overlap=st.floats(0.3, 0.95))
    def test_matches_bisection(self, w, h, overlap):
        assert abs(gaussian_radius(w, h, overlap) - oracles.radius_bisection(w, h, overlap)) < 1e-6

    @settings(max_examples=100, deadline=None)
    @given(w=sizes, h=sizes)
    def test_radius_reaches_but_does_not_pass_min_overlap(self, w, h):
        r = gaussian_radius(w, h, 0.7)
        worst = min(oracles.iou_displaced(w, h, r, case) for case in (1, 2, 3))
        assert worst == pytest.approx(0.7, abs=1e-9)

    @settings(max_examples=100, deadline=None)
    @given(w=sizes, h=sizes)
    def test_sigma_monotone_in_size(self, w, h):
        assert gaussian_sigma(2 * w, 2 * h) >= gaussian_sigma(w, h)

    def test_tiny_box_clamped(self):
        assert gaussian_sigma(0.5, 0.5) == 0.5

    @pytest.mark.parametrize("w, h", [(0.0, 3.0), (3.0, -1.0)])
    def test_non_positive_size_rejected(self, w, h):
        with pytest.raises(ValueError):
            gaussian_sigma(w, h)


class TestMakeTargets:
    def test_floor_and_offset(self):
        t = make_targets(GroundTruthBox(101.0, 49.0, 20.0, 12.0), 4, (32, 32))
        assert t.center_cell == (25, 12)
        assert t.offset_target == pytest.approx((0.25, 0.25))
        assert t.size_target == pytest.approx((5.0, 3.0))

    def test_pixel_units_switch(self):
        t = make_targets(GroundTruthBox(30.0, 30.0, 20.0, 12.0), 4, (16, 16), size_in_pixels=True)
        assert t.size_target == (20.0, 12.0)

    def test_cell_corner_gives_zero_offset(self):
        assert make_targets(GroundTruthBox(32.0, 8.0, 6, 6), 4, (16, 16)).offset_target == (0, 0)

    def test_value_at_one_sigma(self):
        t = make_targets(GroundTruthBox(64.0, 64.0, 80.0, 80.0), 4, (32, 32))
        x, y = t.center_cell
        s = t.sigma
        for dist in (1, 2, 3):
            assert t.heatmap[y, x + dist] == pytest.approx(math.exp(-dist**2 / (2 * s * s)))
            assert t.heatmap[y + dist, x] == pytest.approx(math.exp(-dist**2 / (2 * s * s)))
        # the sigma recovered from one sample puts exp(-1/2) at distance sigma
        fitted = math.sqrt(-1.0 / (2 * math.log(t.heatmap[y, x + 1])))
        assert fitted == pytest.approx(s)
        assert math.exp(-s**2 / (2 * fitted**2)) == pytest.approx(0.6065, abs=1e-4)

    @settings(max_examples=100, deadline=None)
    @given(cx=st.floats(0, 63.99), cy=st.floats(0, 63.99), w=st.floats(1, 40), h=st.floats(1, 40))
    def test_bundle_invariants(self, cx, cy, w, h):
        t = make_targets(GroundTruthBox(cx, cy, w, h), 4, (16, 16))
        x, y = t.center_cell
        assert t.heatmap[y, x] == 1.0
        assert np.all((t.heatmap >= 0) & (t.heatmap <= 1))
        assert np.count_nonzero(t.heatmap == 1.0) == 1
        assert all(0 <= o < 1 for o in t.offset_target)
        # monotone decay with distance from the center
        ys, xs = np.mgrid[0:16, 0:16]
        dist = (xs - x) ** 2 + (ys - y) ** 2
        order = np.argsort(dist, axis=None, kind="stable")
        values, d = t.heatmap.ravel()[order], dist.ravel()[order]
        assert np.all(np.diff(values)[np.diff(d) > 0] <= 0)


class TestFocalLoss:
    def test_positive_pixel_closed_form(self):
        loss = focal_loss(Tensor(np.array([[0.5]])), np.array([[1.0]])).item()
        assert abs(loss - 0.25 * math.log(2)) < 1e-12
        assert abs(loss - 0.1733) < 1e-4

    def test_negative_pixel_closed_form(self):
        loss = focal_loss(Tensor(np.array([[0.5]])), np.array([[0.5]])).item()
        assert abs(loss - 0.5**4 * 0.5**2 * math.log(2)) < 1e-12
        assert abs(loss - 0.01083) < 1e-4

    def test_normalised_by_center_count(self):
        pred = np.full((2, 1, 1), 0.5)
        target = np.ones((2, 1, 1))
        assert focal_loss(Tensor(pred), target).item() == pytest.approx(0.25 * math.log(2))

    def test_perfect_prediction_limit(self):
        target = make_targets(GroundTruthBox(30, 30, 10, 10), 4, (16, 16)).heatmap
        one_hot = (target == 1.0).astype(float)
        assert focal_loss(Tensor(one_hot), target).item() < 1e-7

    def test_clamp_keeps_loss_finite(self):
        target = np.zeros((2, 2))
        target[0, 0] = 1.0
        loss = focal_loss(Tensor(np.array([[0.0, 1.0], [1.0, 0.0]])), target).item()
        assert np.isfinite(loss)

    @staticmethod
    def _mix_losses(peak, target, lams):
        uniform = np.full_like(target, target.mean())
        return np.array([focal_loss(Tensor(lam * peak + (1 - lam) * uniform), target).item()
                         for lam in lams])

    @pytest.mark.parametrize("box", [(30, 22, 14, 10), (30, 30, 40, 40), (10, 50, 8, 8)])
    def test_moving_mass_off_center_never_helps(self, box):
        target = make_targets(GroundTruthBox(*box), 4, (16, 16)).heatmap
        one_hot = (target == 1.0).astype(float)
        losses = self._mix_losses(one_hot, target, np.linspace(0, 1, 41))
        assert np.all(np.diff(losses) < 0)

    @pytest.mark.parametrize("box", [(30, 22, 14, 10), (30, 30, 40, 40), (10, 50, 8, 8)])
    def test_mixing_towards_the_gaussian(self, box):
        target = make_targets(GroundTruthBox(*box), 4, (16, 16)).heatmap
        losses = self._mix_losses(target, target, np.linspace(0, 0.9, 37))
        assert np.all(np.diff(losses) < 0)

    def test_gaussian_itself_is_not_the_minimiser(self):
        # the positive term has zero slope at p = 1 while tail pixels still pay
        # for p = C > 0, so the loss rises again on the last stretch towards C
        target = make_targets(GroundTruthBox(30, 22, 14, 10), 4, (16, 16)).heatmap
        losses = self._mix_losses(target, target, [0.95, 1.0])
        assert losses[1] > losses[0]

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            focal_loss(Tensor(np.ones((2, 2)) * 0.5), np.ones((2, 3)))


class TestRegressionLosses:
    def _setup(self):
        bundle = make_targets(GroundTruthBox(21.0, 37.0, 12.0, 8.0), 4, (16, 16))
        x, y = bundle.center_cell
        maps = [np.zeros((16, 16)) for _ in range(4)]
        for m, v in zip(maps, (*bundle.size_target, *bundle.offset_target)):
            m[y, x] = v
        return bundle, maps

    def test_exact_predictions_give_zero(self):
        bundle, maps = self._setup()
        l_size, l_off = regression_losses(*[Tensor(m) for m in maps], bundle)
        assert (l_size.item(), l_off.item()) == (0.0, 0.0)

    def test_width_off_by_one(self):
        bundle, maps = self._setup()
        x, y = bundle.center_cell
        maps[0][y, x] += 1.0
        l_size, l_off = regression_losses(*[Tensor(m) for m in maps], bundle)
        assert l_size.item() == pytest.approx(1.0) and l_off.item() == 0.0

    def test_other_cells_are_ignored(self):
        bundle, maps = self._setup()
        x, y = bundle.center_cell
        noisy = [m + np.random.default_rng(k).normal(size=m.shape) for k, m in enumerate(maps)]
        for m, clean in zip(noisy, maps):
            m[y, x] = clean[y, x]
        l_size, l_off = regression_losses(*[Tensor(m) for m in noisy], bundle)
        assert (l_size.item(), l_off.item()) == (0.0, 0.0)

    def test_gradient_supported_on_center_only(self):
        rng = np.random.default_rng(0)
        bundles = [make_targets(GroundTruthBox(*rng.uniform(5, 59, 2), 9, 9), 4, (16, 16))
                   for _ in range(3)]
        maps = [Tensor(rng.normal(size=(3, 16, 16)), requires_grad=True) for _ in range(4)]
        l_size, l_off = regression_losses(*maps, bundles)
        total_loss(Tensor(0.0), l_size, l_off).backward()
        for m in maps:
            support = np.argwhere(m.grad != 0)
            expected = sorted((n, b.center_cell[1], b.center_cell[0])
                              for n, b in enumerate(bundles))
            assert sorted(map(tuple, support)) == expected

    def test_batch_count_mismatch(self):
        bundle, maps = self._setup()
        with pytest.raises(ShapeError):
            regression_losses(*[Tensor(np.stack([m, m])) for m in maps], [bundle])


class TestTotalLoss:
    def test_paper_weights(self):
        assert total_loss(1.0, 1.0, 1.0) == pytest.approx(2.1, abs=1e-15)
        assert total_loss(0.0, 0.0, 0.0) == 0.0

    def test_weighted_sum(self):
        assert total_loss(0.1733, 0.5, 0.25) == pytest.approx(0.4733, abs=1e-12)

    def test_custom_weights(self):
        assert total_loss(1.0, 2.0, 3.0, size_weight=0.5, off_weight=0.0) == 2.0
