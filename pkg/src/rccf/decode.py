"""Box decoding from predicted maps, IoU and Prec@IoU scoring."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from rccf.core.tensor import Tensor
from rccf.targets import GroundTruthBox


@dataclass(frozen=True)
class Box:
    """Corner box in input-image pixels."""

    x1: float
    y1: float
    x2: float
    y2: float

    @property
    def area(self) -> float:
        return max(self.x2 - self.x1, 0.0) * max(self.y2 - self.y1, 0.0)

    def as_tuple(self) -> tuple:
        return (self.x1, self.y1, self.x2, self.y2)

    @classmethod
    def from_target(cls, box: GroundTruthBox) -> "Box":
        return cls(*box.corners)


@dataclass(frozen=True)
class Prediction:
    box: Box
    score: float
    peak: tuple  # (x, y) map cell


def _array(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def decode_box(heatmap, width, height, dx, dy, stride: int, image_size: tuple) -> Prediction:
    """Read size and offset at the heatmap peak and assemble the box.

    Ties resolve to the first maximum in row-major order. Corners are built in
    map units, scaled by ``stride`` and clipped to ``image_size = (H, W)``.
    """
    heat = _array(heatmap)
    maps = [_array(m) for m in (width, height, dx, dy)]
    if any(m.shape != heat.shape for m in maps):
        raise ValueError("all maps must share the heatmap's shape")
    flat = int(np.argmax(heat))
    y, x = divmod(flat, heat.shape[1])
    w, h, ox, oy = (float(m[y, x]) for m in maps)
    cx, cy = x + ox, y + oy
    img_h, img_w = image_size
    x1 = min(max((cx - w / 2.0) * stride, 0.0), img_w)
    y1 = min(max((cy - h / 2.0) * stride, 0.0), img_h)
    x2 = min(max((cx + w / 2.0) * stride, 0.0), img_w)
    y2 = min(max((cy + h / 2.0) * stride, 0.0), img_h)
    return Prediction(Box(x1, y1, max(x1, x2), max(y1, y2)), float(heat[y, x]), (x, y))


def iou(a: Box, b: Box) -> float:
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    inter = max(iw, 0.0) * max(ih, 0.0)
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return min(max(inter / union, 0.0), 1.0)


def precision_at_iou(pairs: Sequence[tuple], threshold: float = 0.5) -> float:
    """Fraction of ``(prediction, ground truth)`` pairs with IoU strictly above threshold."""
    if not pairs:
        raise ValueError("precision needs at least one prediction")
    hits = 0
    for pred, truth in pairs:
        pb = pred.box if isinstance(pred, Prediction) else pred
        tb = Box.from_target(truth) if isinstance(truth, GroundTruthBox) else truth
        hits += iou(pb, tb) > threshold
    return hits / len(pairs)
