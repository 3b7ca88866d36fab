"""Dataset evaluation, per-stage latency profiling and report files."""

from __future__ import annotations

import json
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from rccf.data import Sample
from rccf.decode import Box, Prediction, decode_box, iou
from rccf.errors import ConfigError
from rccf.model import RCCFModel
from rccf.text import Vocabulary, pad_batch, tokenize

STAGES = ("encode_image", "encode_expression", "correlate_fuse", "regression_heads", "decode")


@dataclass
class EvalReport:
    split: str
    count: int
    precision: float
    mean_iou: float
    predictions: list = field(default_factory=list, repr=False)
    ious: list = field(default_factory=list, repr=False)


def predict(model: RCCFModel, vocab: Vocabulary, images: np.ndarray,
            expressions: Sequence[str]) -> list:
    """Decoded predictions for a batch of images and expressions."""
    ids = pad_batch([tokenize(e, vocab) for e in expressions])
    out = model(images, ids)
    return [model.decode(out, i) for i in range(len(expressions))]


def evaluate_samples(model: RCCFModel, vocab: Vocabulary, samples: Sequence[Sample],
                     split: str = "val", batch_size: int = 50,
                     threshold: float = 0.5) -> EvalReport:
    if not samples:
        raise ConfigError(f"split {split!r} is empty")
    preds, ious = [], []
    for start in range(0, len(samples), batch_size):
        chunk = samples[start:start + batch_size]
        images = np.stack([s.image for s in chunk])
        for sample, pred in zip(chunk, predict(model, vocab, images,
                                               [s.expression for s in chunk])):
            preds.append(pred)
            ious.append(iou(pred.box, Box(*sample.box)))
    hits = sum(v > threshold for v in ious)
    return EvalReport(split, len(samples), hits / len(samples), float(np.mean(ious)), preds, ious)


def timing_profile(model: RCCFModel, vocab: Vocabulary, image: np.ndarray, expression: str,
                   repeats: int = 11) -> dict:
    """Median wall time per inference stage (seconds) over ``repeats`` runs.

    Also reports ``total``, the median of the summed stage times, and
    ``end_to_end``, the median of an uninstrumented full prediction.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    images = np.asarray(image)[None]
    ids = pad_batch([tokenize(expression, vocab)])
    cfg = model.config
    scale = 1 if cfg.size_units == "map" else cfg.stride
    samples = {name: [] for name in STAGES}
    totals, direct = [], []
    for _ in range(repeats):
        t0 = time.perf_counter()
        pyramid = model.encode_image(images)
        t1 = time.perf_counter()
        lang = model.encode_expression(ids)
        t2 = time.perf_counter()
        corr = model.correlate(pyramid, lang)
        t3 = time.perf_counter()
        size, offset = model.regress(pyramid, corr.per_level)
        t4 = time.perf_counter()
        heat = corr.fused.data[0]
        d = cfg.stride
        decode_box(heat, size.data[0, 0] / scale, size.data[0, 1] / scale, offset.data[0, 0],
                   offset.data[0, 1], d, (heat.shape[0] * d, heat.shape[1] * d))
        t5 = time.perf_counter()
        for name, dt in zip(STAGES, (t1 - t0, t2 - t1, t3 - t2, t4 - t3, t5 - t4)):
            samples[name].append(dt)
        totals.append(t5 - t0)
        s0 = time.perf_counter()
        out = model(images, ids)
        model.decode(out, 0)
        direct.append(time.perf_counter() - s0)
    profile = {name: statistics.median(v) for name, v in samples.items()}
    profile["total"] = statistics.median(totals)
    profile["end_to_end"] = statistics.median(direct)
    return profile


def report_rows(reports: Sequence[EvalReport]) -> str:
    lines = ["split\tcount\tprec@0.5\tmean_iou"]
    for r in reports:
        lines.append(f"{r.split}\t{r.count}\t{r.precision:.6f}\t{r.mean_iou:.6f}")
    return "\n".join(lines) + "\n"


def write_reports(out_dir, reports: Sequence[EvalReport], timing: dict | None = None) -> None:
    """Write ``report.tsv`` and ``report.json``; latency goes to ``timing.tsv``.

    The two report files depend only on the checkpoint and data, so they are
    byte-stable across runs; wall-clock numbers are kept in a separate file.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.tsv").write_text(report_rows(reports), encoding="utf-8")
    summary = {r.split: {"count": r.count, "prec@0.5": r.precision, "mean_iou": r.mean_iou}
               for r in reports}
    (out / "report.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n",
                                     encoding="utf-8")
    if timing is not None:
        lines = ["stage\tmedian_ms"] + [f"{k}\t{v * 1e3:.4f}" for k, v in timing.items()]
        (out / "timing.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")


def prediction_record(pred: Prediction) -> str:
    b = pred.box
    return (f"box {b.x1:.4f} {b.y1:.4f} {b.x2:.4f} {b.y2:.4f}\tscore {pred.score:.6f}\t"
            f"peak {pred.peak[0]} {pred.peak[1]}")
