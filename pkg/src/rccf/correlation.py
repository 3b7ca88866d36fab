"""Language-guided kernels, per-level correlation and heatmap fusion."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from rccf.core import functional as F
from rccf.core.tensor import Tensor, as_tensor, stack
from rccf.errors import ConfigError, ShapeError
from rccf.nn import Linear, Module, param

FUSIONS = ("average", "max", "concat")


@dataclass
class KernelSet:
    kernels: list  # one N x C x k x k (or C x k x k) tensor per level
    kernel_size: int
    mode: str


@dataclass
class CorrelationOutput:
    per_level: list  # pre-activation maps
    fused: Tensor  # heatmap in (0, 1)
    strategy: str


class KernelGenerator(Module):
    """Three linear maps from the expression feature to filter kernels.

    In ``single`` mode only the first map exists and its kernel is reused for
    every level. A ``kernel_size`` of 3 widens each map's output nine-fold.
    """

    def __init__(self, rng: np.random.Generator, lang_dim: int, channels: int,
                 kernel_size: int = 1, mode: str = "per-level", levels: int = 3):
        if kernel_size not in (1, 3):
            raise ConfigError(f"kernel_size must be 1 or 3, got {kernel_size}")
        if mode not in ("per-level", "single"):
            raise ConfigError(f"unknown kernel mode {mode!r}")
        self.channels = channels
        self.kernel_size = kernel_size
        self.mode = mode
        self.levels = levels
        out_dim = channels * kernel_size * kernel_size
        count = 1 if mode == "single" else levels
        self.maps = [Linear(rng, lang_dim, out_dim, std=1.0 / np.sqrt(lang_dim * channels))
                     for _ in range(count)]

    def __call__(self, lang: Tensor) -> KernelSet:
        lang = as_tensor(lang)
        d_in = self.maps[0].weight.shape[1]
        if lang.shape[-1] != d_in:
            raise ShapeError(f"expression feature of dim {lang.shape[-1]} does not match the "
                             f"kernel maps' input dim {d_in}")
        shape = (self.channels, self.kernel_size, self.kernel_size)
        lead = lang.shape[:-1]
        kernels = [m(lang).reshape(*lead, *shape) for m in self.maps]
        if self.mode == "single":
            kernels = kernels * self.levels
        return KernelSet(kernels, self.kernel_size, self.mode)


def generate_kernels(lang: Tensor, generator: KernelGenerator) -> KernelSet:
    return generator(lang)


def correlate(kernel: Tensor, level: Tensor) -> Tensor:
    """Convolve one language kernel over one feature level, keeping the size."""
    kernel, level = as_tensor(kernel), as_tensor(level)
    if kernel.shape[-3] != level.shape[-3]:
        raise ShapeError(f"kernel {kernel.shape} and feature level {level.shape} disagree on "
                         "channels")
    return F.correlate(kernel, level, padding=kernel.shape[-1] // 2)


class ConcatFusion(Module):
    """Learned 1x1 convolution over the stacked correlation maps."""

    def __init__(self, levels: int = 3):
        self.weight = param(np.full((1, levels, 1, 1), 1.0 / levels))
        self.bias = param(np.zeros(1))


def fuse_maps(per_level, strategy: str = "average",
              concat_weights: ConcatFusion | None = None) -> Tensor:
    """Combine per-level correlation maps and squash the result with a sigmoid."""
    maps = [as_tensor(m) for m in per_level]
    if len({m.shape for m in maps}) != 1:
        raise ShapeError(f"correlation maps differ in shape: {[m.shape for m in maps]}")
    if strategy == "average":
        pre = maps[0]
        for m in maps[1:]:
            pre = pre + m
        pre = pre * (1.0 / len(maps))
    elif strategy == "max":
        pre = stack(maps, axis=0).max(axis=0)
    elif strategy == "concat":
        if concat_weights is None:
            raise ConfigError("concat fusion needs concat_weights")
        stacked = stack(maps, axis=-3)  # (N x) L x H x W
        pre = F.conv2d(stacked, concat_weights.weight, concat_weights.bias)
        pre = pre.reshape(pre.shape[:-3] + pre.shape[-2:])
    else:
        raise ConfigError(f"unknown fusion strategy {strategy!r}; expected one of {FUSIONS}")
    return pre.sigmoid()


def correlate_and_fuse(kernels: KernelSet, levels: list, strategy: str = "average",
                       concat_weights: ConcatFusion | None = None) -> CorrelationOutput:
    if len(levels) > len(kernels.kernels):
        raise ShapeError(f"{len(levels)} feature levels but {len(kernels.kernels)} kernels")
    per_level = [correlate(k, e) for k, e in zip(kernels.kernels, levels)]
    fused = fuse_maps(per_level, strategy, concat_weights)
    return CorrelationOutput(per_level, fused, strategy)
