"""Ground-truth heatmaps and the center, size and offset losses."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from rccf.core.tensor import Tensor, as_tensor
from rccf.errors import ShapeError

FOCAL_ALPHA = 2.0
FOCAL_BETA = 4.0
PROB_EPS = 1e-4
SIGMA_MIN = 0.5


@dataclass(frozen=True)
class GroundTruthBox:
    """Box center and size in input-image pixels."""

    cx: float
    cy: float
    w: float
    h: float

    @classmethod
    def from_corners(cls, x1: float, y1: float, x2: float, y2: float) -> "GroundTruthBox":
        return cls((x1 + x2) / 2.0, (y1 + y2) / 2.0, x2 - x1, y2 - y1)

    @property
    def corners(self) -> tuple:
        return (self.cx - self.w / 2.0, self.cy - self.h / 2.0,
                self.cx + self.w / 2.0, self.cy + self.h / 2.0)


@dataclass
class TargetBundle:
    heatmap: np.ndarray  # (H/d) x (W/d)
    center_cell: tuple  # (x, y) in map coordinates
    size_target: tuple  # (w, h) in map units (or pixels, see make_targets)
    offset_target: tuple  # sub-cell (dx, dy) in [0, 1)
    sigma: float


def gaussian_radius(w: float, h: float, min_overlap: float = 0.7) -> float:
    """Largest center displacement that keeps IoU >= ``min_overlap``.

    Minimum over three cases: the shifted box, a shrunk box and a grown box;
    each case's IoU as a function of the displacement is a quadratic whose
    smallest positive root is taken.
    """
    if w <= 0 or h <= 0:
        raise ValueError(f"box size must be positive, got {w} x {h}")
    if not 0.0 < min_overlap < 1.0:
        raise ValueError(f"min_overlap must be in (0, 1), got {min_overlap}")
    o = min_overlap
    # corners shifted together: (w-r)(h-r) / (2wh - (w-r)(h-r)) = o
    b1, c1 = w + h, w * h * (1 - o) / (1 + o)
    r1 = (b1 - math.sqrt(b1 * b1 - 4 * c1)) / 2
    # both corners moved inwards: (w-2r)(h-2r) / wh = o
    a2, b2, c2 = 4.0, 2 * (w + h), (1 - o) * w * h
    r2 = (b2 - math.sqrt(b2 * b2 - 4 * a2 * c2)) / (2 * a2)
    # both corners moved outwards: wh / ((w+2r)(h+2r)) = o
    a3, b3, c3 = 4 * o, 2 * o * (w + h), (o - 1) * w * h
    r3 = (-b3 + math.sqrt(b3 * b3 - 4 * a3 * c3)) / (2 * a3)
    return min(r1, r2, r3)


def gaussian_sigma(w: float, h: float, min_overlap: float = 0.7,
                   sigma_min: float = SIGMA_MIN) -> float:
    """Standard deviation of the center Gaussian for a ``w x h`` box (map units)."""
    return max(gaussian_radius(w, h, min_overlap) / 3.0, sigma_min)


def make_targets(box: GroundTruthBox, stride: int, map_shape: tuple,
                 min_overlap: float = 0.7, size_in_pixels: bool = False) -> TargetBundle:
    """Splat a Gaussian at the floored center and compute regression targets."""
    mh, mw = map_shape
    fx, fy = box.cx / stride, box.cy / stride
    x, y = int(math.floor(fx)), int(math.floor(fy))
    assert 0 <= x < mw and 0 <= y < mh, f"center ({box.cx}, {box.cy}) falls outside the map"
    sw, sh = box.w / stride, box.h / stride
    sigma = gaussian_sigma(sw, sh, min_overlap)
    ys, xs = np.arange(mh)[:, None], np.arange(mw)[None, :]
    heatmap = np.exp(-((xs - x) ** 2 + (ys - y) ** 2) / (2.0 * sigma * sigma))
    heatmap[y, x] = 1.0
    size = (box.w, box.h) if size_in_pixels else (sw, sh)
    return TargetBundle(heatmap, (x, y), size, (fx - x, fy - y), sigma)


def focal_loss(pred: Tensor, target, alpha: float = FOCAL_ALPHA, beta: float = FOCAL_BETA,
               eps: float = PROB_EPS) -> Tensor:
    """Penalty-reduced pixel-wise focal loss, normalised by the number of centers."""
    pred = as_tensor(pred)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction {pred.shape} and target {target.shape} differ")
    p = pred.clamp(eps, 1.0 - eps)
    pos = (target == 1.0).astype(np.float64)
    neg_weight = (1.0 - pos) * (1.0 - target) ** beta
    pos_term = (1.0 - p) ** alpha * p.log() * pos
    neg_term = p ** alpha * (1.0 - p).log() * neg_weight
    count = max(pos.sum(), 1.0)
    return -(pos_term + neg_term).sum() * (1.0 / count)


def _gather_centers(maps, bundles):
    """Values of each ``(N x) H x W`` map at the bundles' center cells."""
    maps = [as_tensor(m) for m in maps]
    if len({m.shape for m in maps}) != 1:
        raise ShapeError(f"regression maps differ in shape: {[m.shape for m in maps]}")
    if isinstance(bundles, TargetBundle):
        bundles = [bundles]
        maps = [m.reshape(1, *m.shape) for m in maps]
    n = maps[0].shape[0]
    if len(bundles) != n:
        raise ShapeError(f"{n} map(s) but {len(bundles)} target bundle(s)")
    if maps[0].shape[1:] != bundles[0].heatmap.shape:
        raise ShapeError(f"map shape {maps[0].shape[1:]} does not match target shape "
                         f"{bundles[0].heatmap.shape}")
    rows = np.arange(n)
    xs = np.array([b.center_cell[0] for b in bundles])
    ys = np.array([b.center_cell[1] for b in bundles])
    return [m[rows, ys, xs] for m in maps], n


def regression_losses(width, height, dx, dy, bundles) -> tuple:
    """L1 size and offset losses read only at the center cell, averaged over samples."""
    (w, h, ox, oy), n = _gather_centers((width, height, dx, dy), bundles)
    bundles = [bundles] if isinstance(bundles, TargetBundle) else bundles
    tw = np.array([b.size_target[0] for b in bundles])
    th = np.array([b.size_target[1] for b in bundles])
    tx = np.array([b.offset_target[0] for b in bundles])
    ty = np.array([b.offset_target[1] for b in bundles])
    l_size = ((w - tw).abs() + (h - th).abs()).sum() * (1.0 / n)
    l_off = ((ox - tx).abs() + (oy - ty).abs()).sum() * (1.0 / n)
    return l_size, l_off


def total_loss(l_center, l_size, l_off, size_weight: float = 0.1, off_weight: float = 1.0):
    return l_center + size_weight * l_size + off_weight * l_off
