"""Ablation runner: the main configuration plus six single-change variants."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from rccf.config import TrainConfig
from rccf.data import Sample
from rccf.evaluate import evaluate_samples
from rccf.train import train

# (row, label, config changes); row 0 is the unmodified configuration
VARIANTS = (
    (1, "Maximum Fusion", {"fusion": "max"}),
    (2, "Concatenation", {"fusion": "concat"}),
    (3, "3x3 Filter", {"kernel_size": 3}),
    (4, "Single Language Filter", {"kernel_mode": "single"}),
    (5, "Single Level Visual Feature", {"feature_levels": 1, "kernel_mode": "single"}),
    (6, "Language-guided Regression", {"regression_input": "language"}),
)
BASELINE = (0, "Ours (average fusion)", {})


@dataclass
class AblationRow:
    row: int
    label: str
    changes: dict
    seed: int
    steps: int
    precision: float
    mean_iou: float


def run_ablation(base: TrainConfig, train_samples: Sequence[Sample],
                 val_samples: Sequence[Sample], variants=VARIANTS) -> list:
    """Train and evaluate the baseline and every variant with the same seed and data."""
    if not val_samples:
        raise ValueError("the ablation needs a held-out split")
    rows = []
    for row, label, changes in (BASELINE, *variants):
        config = base.replace(**changes)
        result = train(config, train_samples)
        report = evaluate_samples(result.model, result.vocab, val_samples)
        rows.append(AblationRow(row, label, dict(changes), config.seed, config.steps,
                                report.precision, report.mean_iou))
    return rows


def directional_checks(rows: Sequence[AblationRow]) -> dict:
    """The two qualitative orderings the ablation is expected to show (not gated)."""
    by_row = {r.row: r for r in rows}
    checks = {}
    if 0 in by_row and 5 in by_row:
        checks["average fusion >= single level"] = \
            by_row[0].precision >= by_row[5].precision
    if 0 in by_row and 6 in by_row:
        checks["visual-only >= language-guided regression"] = \
            by_row[0].precision >= by_row[6].precision
    return checks


def format_table(rows: Sequence[AblationRow]) -> str:
    lines = ["row\tmethod\tchanges\tseed\tsteps\tprec@0.5\tmean_iou"]
    for r in sorted(rows, key=lambda r: (r.row == 0, r.row)):
        changes = ",".join(f"{k}={v}" for k, v in r.changes.items()) or "-"
        lines.append(f"{r.row}\t{r.label}\t{changes}\t{r.seed}\t{r.steps}\t"
                     f"{r.precision:.4f}\t{r.mean_iou:.4f}")
    for name, holds in directional_checks(rows).items():
        lines.append(f"# {name}: {'yes' if holds else 'no'}")
    return "\n".join(lines) + "\n"


def write_ablation(out_dir, rows: Sequence[AblationRow]) -> str:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    table = format_table(rows)
    (out / "ablation.tsv").write_text(table, encoding="utf-8")
    payload = {"rows": [r.__dict__ for r in rows], "checks": directional_checks(rows)}
    (out / "ablation.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                                       encoding="utf-8")
    return table
