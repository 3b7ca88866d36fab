"""Small convolutional backbone producing a three-level feature pyramid."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from rccf.core import functional as F
from rccf.core.tensor import Tensor, as_tensor
from rccf.errors import ShapeError
from rccf.nn import Conv2d, Module


@dataclass
class FeaturePyramid:
    """Three equally shaped feature maps; ``levels[0]`` is the finest stage."""

    levels: list
    stride: int
    channels: int

    @property
    def shape(self) -> tuple:
        return self.levels[0].shape


class ImageEncoder(Module):
    """3x3 conv + activation stages at strides ``d``, ``2d`` and ``4d``.

    Pixel values are mapped from [0, 1] to [-1, 1] on entry. A stem of
    stride-2 convs brings the image down to the output stride ``d``; with
    ``stem_width`` set, each intermediate resolution also gets a stride-1
    conv of that width. Each of the following stages halves the resolution
    again. Every stage output is
    bilinearly resized to ``H/d x W/d`` and then projected to ``channels``
    with a 1x1 convolution.
    """

    def __init__(self, rng: np.random.Generator, stride: int = 4, channels: int = 8,
                 widths: tuple = (16, 24, 32), in_channels: int = 3, activation: str = "relu",
                 stem_width: int | None = None):
        if stride < 2 or stride & (stride - 1):
            raise ShapeError(f"output stride must be a power of two >= 2, got {stride}")
        self.stride = stride
        self.activation = activation
        self.channels = channels
        halvings = int(np.log2(stride))
        stem, c = [], in_channels
        for i in range(halvings):
            out = widths[0] if stem_width is None or i == halvings - 1 else stem_width
            stem.append(Conv2d(rng, c, out, 3, stride=2))
            c = out
            if i < halvings - 1 and stem_width is not None:
                stem.append(Conv2d(rng, c, c, 3))
        self.stem = stem
        self.stages = [
            [Conv2d(rng, widths[0], widths[0], 3)],
            [Conv2d(rng, widths[0], widths[1], 3, stride=2), Conv2d(rng, widths[1], widths[1], 3)],
            [Conv2d(rng, widths[1], widths[2], 3, stride=2), Conv2d(rng, widths[2], widths[2], 3)],
        ]
        self.projections = [Conv2d(rng, w, channels, 1) for w in widths]

    def check_input(self, shape: tuple) -> None:
        h, w = shape[-2:]
        unit = 8 * self.stride
        if h % unit or w % unit:
            raise ShapeError(f"image size {h}x{w} must be divisible by 8*stride = {unit}")

    def __call__(self, image) -> FeaturePyramid:
        x = as_tensor(image)
        if x.ndim not in (3, 4) or x.shape[-3] != 3:
            raise ShapeError(f"expected a 3 x H x W image (or a batch), got {x.shape}")
        self.check_input(x.shape)
        out_h, out_w = x.shape[-2] // self.stride, x.shape[-1] // self.stride
        x = x * 2.0 - 1.0
        for conv in self.stem:
            x = F.activation(conv(x), self.activation)
        levels = []
        for stage, project in zip(self.stages, self.projections):
            for conv in stage:
                x = F.activation(conv(x), self.activation)
            levels.append(project(F.bilinear_resize(x, out_h, out_w)))
        return FeaturePyramid(levels, self.stride, self.channels)


def encode_image(image, encoder: ImageEncoder) -> FeaturePyramid:
    return encoder(image)
