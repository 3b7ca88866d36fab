"""Optimiser, augmentation and the training loop."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from rccf.checkpoint import Checkpoint
from rccf.config import TrainConfig
from rccf.core.tensor import Tensor
from rccf.data import BACKGROUND, Sample, read_dataset
from rccf.errors import ConfigError, NonFiniteError
from rccf.model import RCCFModel
from rccf.targets import focal_loss, make_targets, regression_losses, total_loss
from rccf.text import Vocabulary, pad_batch, tokenize

log = logging.getLogger(__name__)


# ----------------------------------------------------------------------
# optimisation
# ----------------------------------------------------------------------
def adam_step(param: np.ndarray, grad: np.ndarray, m: np.ndarray, v: np.ndarray, step: int,
              lr: float, betas: tuple = (0.9, 0.999), eps: float = 1e-8) -> tuple:
    """One bias-corrected Adam update; returns ``(param, m, v)`` as new arrays."""
    if step < 1:
        raise ValueError("Adam step counter starts at 1")
    b1, b2 = betas
    m = b1 * m + (1.0 - b1) * grad
    v = b2 * v + (1.0 - b2) * grad * grad
    m_hat = m / (1.0 - b1 ** step)
    v_hat = v / (1.0 - b2 ** step)
    return param - lr * m_hat / (np.sqrt(v_hat) + eps), m, v


class Adam:
    def __init__(self, named_params: Sequence[tuple], betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(named_params)
        self.betas = betas
        self.eps = eps
        self.m = {name: np.zeros_like(p.data) for name, p in self.params}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params}
        self.step_count = 0

    def step(self, lr: float) -> None:
        """Apply one update; raises :class:`NonFiniteError` and leaves state untouched."""
        for name, p in self.params:
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                raise NonFiniteError(f"non-finite gradient for {name}; step aborted")
        self.step_count += 1
        for name, p in self.params:
            grad = p.grad if p.grad is not None else np.zeros_like(p.data)
            p.data, self.m[name], self.v[name] = adam_step(
                p.data, grad, self.m[name], self.v[name], self.step_count, lr, self.betas,
                self.eps)

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.grad = None


def learning_rate(step: int, config: TrainConfig) -> float:
    """Piecewise-constant schedule with a decay at each configured fraction."""
    lr = config.learning_rate
    for frac in config.decay_fractions:
        if step >= int(round(frac * config.steps)):
            lr *= config.lr_decay
    return lr


# ----------------------------------------------------------------------
# augmentation
# ----------------------------------------------------------------------
def _overlap_matrix(n: int, scale: float, shift: float) -> np.ndarray:
    """Row ``j``: share of output pixel ``j``'s footprint covered by each source pixel.

    Output pixel ``j`` sees the source interval ``c + (j - c - shift) / scale`` to
    ``c + (j + 1 - c - shift) / scale`` with ``c = n / 2``. Rows sum to the
    in-frame part of that footprint.
    """
    c = n / 2.0
    j = np.arange(n)
    lo = c + (j - c - shift) / scale
    hi = c + (j + 1 - c - shift) / scale
    src = np.arange(n)
    overlap = np.minimum(hi[:, None], src[None, :] + 1) - np.maximum(lo[:, None], src[None, :])
    return np.clip(overlap, 0.0, None) / (hi - lo)[:, None]


def apply_affine(sample: Sample, scale: float, shift: tuple) -> Sample:
    """Scale about the image center then translate, with area-weighted resampling.

    Every output pixel whose footprint touches the object takes some of its
    color, so thin parts survive downscaling and the re-rasterised object
    stays within one pixel of the transformed box. Area outside the source
    frame is filled with the background color.
    """
    _, h, w = sample.image.shape
    tx, ty = shift
    ay, ax = _overlap_matrix(h, scale, ty), _overlap_matrix(w, scale, tx)
    background = np.asarray(BACKGROUND, dtype=np.float64) / 255.0
    outside = 1.0 - np.outer(ay.sum(axis=1), ax.sum(axis=1))
    out = ay @ sample.image @ ax.T + background[:, None, None] * outside
    cx, cy = w / 2.0, h / 2.0
    x1, y1, x2, y2 = sample.box
    box = (cx + scale * (x1 - cx) + tx, cy + scale * (y1 - cy) + ty,
           cx + scale * (x2 - cx) + tx, cy + scale * (y2 - cy) + ty)
    return Sample(out, sample.expression, box, sample.name)


def augment_sample(sample: Sample, rng: np.random.Generator, shift_fraction: float = 0.1,
                   scale_range: tuple = (0.9, 1.1), max_tries: int = 10) -> Sample:
    """Random shift/scale that keeps the referent inside the frame.

    Falls back to the unmodified sample when every draw pushes it out.
    """
    _, h, w = sample.image.shape
    for _ in range(max_tries):
        scale = rng.uniform(*scale_range)
        shift = (rng.uniform(-shift_fraction, shift_fraction) * w,
                 rng.uniform(-shift_fraction, shift_fraction) * h)
        out = apply_affine(sample, scale, shift)
        x1, y1, x2, y2 = out.box
        if x1 >= 0 and y1 >= 0 and x2 <= w and y2 <= h:
            return out
    return sample


# ----------------------------------------------------------------------
# batching and losses
# ----------------------------------------------------------------------
def build_batch(samples: Sequence[Sample], vocab: Vocabulary, config: TrainConfig) -> tuple:
    images = np.stack([s.image for s in samples])
    ids = pad_batch([tokenize(s.expression, vocab) for s in samples])
    map_shape = (images.shape[2] // config.stride, images.shape[3] // config.stride)
    bundles = [make_targets(s.target, config.stride, map_shape, config.min_overlap,
                            size_in_pixels=config.size_units == "pixel") for s in samples]
    return images, ids, bundles


@dataclass
class LossTerms:
    center: Tensor
    size: Tensor
    offset: Tensor
    total: Tensor


def compute_losses(model: RCCFModel, images, ids, bundles, config: TrainConfig) -> LossTerms:
    out = model(images, ids)
    heat_target = np.stack([b.heatmap for b in bundles])
    l_c = focal_loss(out.heatmap, heat_target)
    l_size, l_off = regression_losses(out.size[:, 0], out.size[:, 1], out.offset[:, 0],
                                      out.offset[:, 1], bundles)
    loss = total_loss(l_c, l_size, l_off, config.size_weight, config.off_weight)
    return LossTerms(l_c, l_size, l_off, loss)


def size_prior(samples: Sequence[Sample], config: TrainConfig) -> tuple:
    scale = 1.0 if config.size_units == "pixel" else 1.0 / config.stride
    w = np.mean([s.target.w for s in samples]) * scale
    h = np.mean([s.target.h for s in samples]) * scale
    return (float(w), float(h))


# ----------------------------------------------------------------------
# the loop
# ----------------------------------------------------------------------
@dataclass
class TrainResult:
    model: RCCFModel
    vocab: Vocabulary
    checkpoint: Checkpoint
    records: list = field(default_factory=list)
    metrics_log: str = ""


def _format_record(rec: dict) -> str:
    return "\t".join(f"{k}={v!r}" if isinstance(v, float) else f"{k}={v}" for k, v in rec.items())


def parse_metrics_log(text: str) -> list:
    rows = []
    for line in text.splitlines():
        row = {}
        for part in line.split("\t"):
            key, value = part.split("=", 1)
            row[key] = value if key == "kind" else float(value)
        rows.append(row)
    return rows


def model_from_checkpoint(ckpt: Checkpoint) -> tuple:
    config = TrainConfig.from_text(ckpt.config_text)
    vocab = Vocabulary(ckpt.vocab[2:])
    model = RCCFModel(config, len(vocab), ckpt.size_prior)
    model.load_state_dict(ckpt.params)
    return model, vocab, config


def train(config: TrainConfig, train_samples: Sequence[Sample],
          val_samples: Sequence[Sample] = (), out_dir=None, resume: Optional[Checkpoint] = None,
          stop_at: Optional[int] = None, checkpoint_steps: Sequence[int] = ()) -> TrainResult:
    """Train on ``train_samples``; optionally evaluate on ``val_samples``.

    The batch order for step ``t`` depends only on ``(seed, epoch)`` and the
    augmentation draw only on ``(seed, t)``, so a run resumed from a
    checkpoint replays the uninterrupted run exactly. ``stop_at`` ends the run
    early (the schedule still assumes ``config.steps``).
    """
    from rccf.evaluate import evaluate_samples  # local import: evaluate imports train helpers

    if not train_samples:
        raise ConfigError("training split is empty")
    if train_samples[0].image.shape[1:] != (config.image_size, config.image_size):
        raise ConfigError(f"dataset images are {train_samples[0].image.shape[1:]}, config "
                          f"expects {config.image_size}x{config.image_size}")
    if resume is not None:
        model, vocab, _ = model_from_checkpoint(resume)
        prior = resume.size_prior
    else:
        vocab = Vocabulary.from_texts(s.expression for s in train_samples)
        prior = size_prior(train_samples, config)
        model = RCCFModel(config, len(vocab), prior)
    opt = Adam(list(model.named_parameters()), (config.adam_beta1, config.adam_beta2),
               config.adam_eps)
    start, lines = 0, []
    if resume is not None:
        opt.m = {k: v.copy() for k, v in resume.adam_m.items()}
        opt.v = {k: v.copy() for k, v in resume.adam_v.items()}
        opt.step_count = start = resume.step
        lines = resume.metrics_log.splitlines()

    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    n = len(train_samples)
    per_epoch = max(1, math.ceil(n / config.batch_size))
    end = config.steps if stop_at is None else min(stop_at, config.steps)
    window, best = [], math.inf

    def snapshot(step: int) -> Checkpoint:
        return Checkpoint(model.state_dict(), {k: v.copy() for k, v in opt.m.items()},
                          {k: v.copy() for k, v in opt.v.items()}, step, config.to_text(),
                          list(vocab.itos), prior, {"seed": config.seed, "next_step": step},
                          "\n".join(lines) + ("\n" if lines else ""))

    for step in range(start, end):
        epoch, pos = divmod(step, per_epoch)
        order = np.random.default_rng([config.seed, epoch]).permutation(n)
        batch = [train_samples[i] for i in order[pos * config.batch_size:
                                                 (pos + 1) * config.batch_size]]
        if config.augment:
            aug_rng = np.random.default_rng([config.seed, 7919, step])
            batch = [augment_sample(s, aug_rng, config.shift_fraction, config.scale_range)
                     for s in batch]
        images, ids, bundles = build_batch(batch, vocab, config)
        opt.zero_grad()
        terms = compute_losses(model, images, ids, bundles, config)
        terms.total.backward()
        lr = learning_rate(step, config)
        opt.step(lr)

        if (step + 1) % config.log_every == 0 or step == 0:
            rec = {"kind": "train", "step": step + 1, "L_c": terms.center.item(),
                   "L_size": terms.size.item(), "L_off": terms.offset.item(),
                   "Loss": terms.total.item(), "lr": lr}
            lines.append(_format_record(rec))
            window.append(rec["Loss"])
            if len(window) == 20:
                mean = float(np.mean(window))
                if mean >= best:
                    log.warning("loss has not decreased over the last %d log points (%.4f)",
                                len(window), mean)
                best = min(best, mean)
                window = []
        if val_samples and ((step + 1) % config.eval_every == 0 or step + 1 == end):
            report = evaluate_samples(model, vocab, val_samples)
            lines.append(_format_record({"kind": "eval", "step": step + 1,
                                         "prec50": report.precision,
                                         "mean_iou": report.mean_iou}))
            log.info("step %d: held-out Prec@0.5 %.3f", step + 1, report.precision)
        if out_dir is not None and step + 1 in checkpoint_steps:
            snapshot(step + 1).save(out_dir / f"checkpoint_{step + 1:06d}.bin")

    ckpt = snapshot(end)
    metrics = "\n".join(lines) + ("\n" if lines else "")
    if out_dir is not None:
        ckpt.save(out_dir / "checkpoint.bin")
        (out_dir / "metrics.log").write_text(metrics, encoding="utf-8")
        (out_dir / "config.txt").write_text(config.to_text(), encoding="utf-8")
        vocab.save(out_dir / "vocab.txt")
    return TrainResult(model, vocab, ckpt, parse_metrics_log(metrics), metrics)


def train_from_directory(config: TrainConfig, data_dir, out_dir=None, **kwargs) -> TrainResult:
    splits = read_dataset(data_dir)
    if "train" not in splits:
        raise ConfigError(f"{data_dir} has no train split")
    return train(config, splits["train"], splits.get("val", []), out_dir, **kwargs)
