"""The full grounding network: encoders, correlation filtering, regression heads."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from rccf.config import TrainConfig
from rccf.core import functional as F
from rccf.core.tensor import Tensor, as_tensor, stack
from rccf.correlation import ConcatFusion, KernelGenerator, correlate_and_fuse
from rccf.decode import Prediction, decode_box
from rccf.image_encoder import FeaturePyramid, ImageEncoder
from rccf.nn import Conv2d, Module
from rccf.text import ExpressionEncoder


@dataclass
class Outputs:
    heatmap: Tensor  # N x h x w, in (0, 1)
    size: Tensor  # N x 2 x h x w (width, height)
    offset: Tensor  # N x 2 x h x w (dx, dy)
    per_level: list  # pre-activation correlation maps


class RegressionHead(Module):
    """3x3 conv + activation followed by a 1x1 conv to two channels."""

    def __init__(self, rng: np.random.Generator, c_in: int, hidden: int, init_bias=(0.0, 0.0),
                 activation: str = "relu"):
        self.activation = activation
        self.hidden = Conv2d(rng, c_in, hidden, 3)
        self.out = Conv2d(rng, hidden, 2, 1, std=1e-3)
        self.out.bias.data[:] = init_bias

    def __call__(self, x: Tensor) -> Tensor:
        return self.out(F.activation(self.hidden(x), self.activation))


class RCCFModel(Module):
    def __init__(self, config: TrainConfig, vocab_size: int, size_prior=(1.0, 1.0)):
        rng = np.random.default_rng(config.seed)
        self.config = config
        self.image_encoder = ImageEncoder(rng, config.stride, config.channels,
                                          tuple(config.backbone_widths),
                                          activation=config.activation,
                                          stem_width=config.stem_width or None)
        self.expression_encoder = ExpressionEncoder(rng, vocab_size, config.embed_dim,
                                                    config.lang_dim, config.encoder_mode)
        self.kernel_generator = KernelGenerator(rng, config.lang_dim, config.channels,
                                                config.kernel_size, config.kernel_mode,
                                                levels=config.feature_levels)
        self.concat_fusion = ConcatFusion(config.feature_levels) \
            if config.fusion == "concat" else None
        head_in = config.channels if config.regression_input == "visual" \
            else config.feature_levels
        self._init_heatmap_prior(config.heatmap_prior)
        self.size_head = RegressionHead(rng, head_in, config.head_hidden, size_prior,
                                        config.activation)
        self.offset_head = RegressionHead(rng, head_in, config.head_hidden, (0.5, 0.5),
                                          config.activation)

    def _init_heatmap_prior(self, prior: float) -> None:
        """Start the heatmap near ``prior`` instead of 0.5.

        Every projected feature channel gets a bias of 1 and each kernel map's
        bias is spread evenly so that the kernel taps sum to ``logit(prior)``.
        The mean correlation response then starts at that logit.
        """
        logit = np.log(prior / (1.0 - prior))
        for proj in self.image_encoder.projections:
            proj.bias.data[:] = 1.0
        for m in self.kernel_generator.maps:
            m.bias.data[:] = logit / m.bias.size

    # individual stages (also used by the timing profile)
    def encode_image(self, images) -> FeaturePyramid:
        return self.image_encoder(images)

    def encode_expression(self, ids) -> Tensor:
        return self.expression_encoder(ids)

    def correlate(self, pyramid: FeaturePyramid, lang: Tensor):
        kernels = self.kernel_generator(lang)
        levels = pyramid.levels[:self.config.feature_levels]
        return correlate_and_fuse(kernels, levels, self.config.fusion, self.concat_fusion)

    def regress(self, pyramid: FeaturePyramid, per_level: list) -> tuple:
        if self.config.regression_input == "visual":
            x = pyramid.levels[0]
        else:
            x = stack(per_level, axis=-3)
        return self.size_head(x), self.offset_head(x)

    def __call__(self, images, ids) -> Outputs:
        images = as_tensor(images)
        pyramid = self.encode_image(images)
        lang = self.encode_expression(ids)
        corr = self.correlate(pyramid, lang)
        size, offset = self.regress(pyramid, corr.per_level)
        return Outputs(corr.fused, size, offset, corr.per_level)

    def decode(self, outputs: Outputs, index: int = 0) -> Prediction:
        """Decode sample ``index`` of a batch of outputs into an image-space box."""
        scale = 1 if self.config.size_units == "map" else self.config.stride
        size = outputs.size.data[index] / scale
        off = outputs.offset.data[index]
        heat = outputs.heatmap.data[index]
        d = self.config.stride
        return decode_box(heat, size[0], size[1], off[0], off[1], d,
                          (heat.shape[0] * d, heat.shape[1] * d))
