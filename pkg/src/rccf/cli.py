"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from rccf.ablation import run_ablation, write_ablation
from rccf.checkpoint import Checkpoint
from rccf.config import TrainConfig
from rccf.data import GeneratorConfig, generate_split, read_dataset, read_ppm, write_dataset
from rccf.errors import RCCFError
from rccf.evaluate import (evaluate_samples, predict, prediction_record, timing_profile,
                           write_reports)
from rccf.text import pad_batch, tokenize
from rccf.train import model_from_checkpoint, train

USAGE, RUNTIME = 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _load_config(path, overrides) -> TrainConfig:
    text = Path(path).read_text(encoding="utf-8") if path else ""
    if overrides:
        text += "\n" + "\n".join(overrides) + "\n"
    return TrainConfig.from_text(text)


def _load_model(path):
    model, vocab, config = model_from_checkpoint(Checkpoint.load(path))
    return model, vocab, config


def _read_image(path, config: TrainConfig) -> np.ndarray:
    image = read_ppm(path)
    if image.shape[1:] != (config.image_size, config.image_size):
        raise RCCFError(f"{path}: image is {image.shape[2]}x{image.shape[1]}, model expects "
                        f"{config.image_size}x{config.image_size}")
    return image


# ----------------------------------------------------------------------
# subcommands
# ----------------------------------------------------------------------
def cmd_gen_data(args) -> int:
    families = tuple(f.strip() for f in args.families.split(",")) if args.families else None
    gen = GeneratorConfig(image_size=args.image_size,
                          **({"families": families} if families else {}))
    splits = {"train": generate_split("train", args.train_count, args.seed, gen)}
    if args.val_count:
        splits["val"] = generate_split("val", args.val_count, args.seed, gen)
    write_dataset(args.out_dir, splits, gen)
    print(f"wrote {sum(map(len, splits.values()))} samples to {args.out_dir}")
    return 0


def cmd_train(args) -> int:
    config = _load_config(args.config, args.set)
    splits = read_dataset(args.data_dir)
    if "train" not in splits:
        raise RCCFError(f"{args.data_dir} has no train split")
    result = train(config, splits["train"], splits.get("val", []), args.out_dir)
    evals = [r for r in result.records if r["kind"] == "eval"]
    if evals:
        print(f"held-out Prec@0.5 {evals[-1]['prec50']:.4f}")
    print(f"checkpoint written to {Path(args.out_dir) / 'checkpoint.bin'}")
    return 0


def cmd_eval(args) -> int:
    model, vocab, config = _load_model(args.checkpoint)
    samples = read_dataset(args.data_dir, args.split).get(args.split, [])
    report = evaluate_samples(model, vocab, samples, args.split)
    timing = None
    if args.timing:
        timing = timing_profile(model, vocab, samples[0].image, samples[0].expression,
                                args.timing)
    out = Path(args.out_dir)
    write_reports(out, [report], timing)
    config.save(out / "config.txt")
    print(f"{args.split}\tcount {report.count}\tprec@0.5 {report.precision:.4f}\t"
          f"mean_iou {report.mean_iou:.4f}")
    return 0


def cmd_infer(args) -> int:
    model, vocab, config = _load_model(args.checkpoint)
    image = _read_image(args.image, config)
    pred = predict(model, vocab, image[None], [args.expression])[0]
    print(prediction_record(pred))
    return 0


def cmd_ablate(args) -> int:
    config = _load_config(args.config, args.set)
    splits = read_dataset(args.data_dir)
    if "train" not in splits or "val" not in splits:
        raise RCCFError(f"{args.data_dir} needs both train and val splits")
    rows = run_ablation(config, splits["train"], splits["val"])
    table = write_ablation(args.out_dir, rows)
    config.save(Path(args.out_dir) / "config.txt")
    print(table, end="")
    return 0


def write_heatmap(path, heatmap: np.ndarray) -> None:
    """Write a map with values in [0, 1] as a binary 8-bit PGM."""
    h, w = heatmap.shape
    pixels = np.clip(np.round(heatmap * 255.0), 0, 255).astype(np.uint8)
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes())


def cmd_dump_heatmap(args) -> int:
    model, vocab, config = _load_model(args.checkpoint)
    image = _read_image(args.image, config)
    out = model(image[None], pad_batch([tokenize(args.expression, vocab)]))
    pred = model.decode(out, 0)
    target = Path(args.out)
    write_heatmap(target, out.heatmap.data[0])
    sidecar = target.with_name(target.name + ".txt")
    sidecar.write_text(f"expression\t{args.expression}\n{prediction_record(pred)}\n",
                       encoding="utf-8")
    print(prediction_record(pred))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rccf", description="Correlation-filter referring expression "
                     "grounding on synthetic scenes.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="write a synthetic dataset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--train-count", type=int, default=800)
    p.add_argument("--val-count", type=int, default=200)
    p.add_argument("--image-size", type=int, default=64)
    p.add_argument("--families", help="comma list of attribute,size,location,relation")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_gen_data)

    for name, func, doc in (("train", cmd_train, "train a model"),
                            ("ablate", cmd_ablate, "train the baseline and six variants")):
        p = sub.add_parser(name, help=doc)
        p.add_argument("--config", help="key = value config file (all keys optional)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override one config key")
        p.add_argument("--data-dir", required=True)
        p.add_argument("--out-dir", required=True)
        p.set_defaults(func=func)

    p = sub.add_parser("eval", help="evaluate a checkpoint on one split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data-dir", required=True)
    p.add_argument("--split", default="val")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--timing", type=int, default=0, metavar="REPEATS",
                   help="also write per-stage latency medians over REPEATS runs")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="print the box for one image and expression")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--expression", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("dump-heatmap", help="write the center heatmap as an 8-bit PGM")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--expression", required=True)
    p.add_argument("--out", required=True, help="PGM path; the box goes to <out>.txt")
    p.set_defaults(func=cmd_dump_heatmap)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (RCCFError, OSError, ValueError) as exc:
        print(f"rccf {args.command}: error: {exc}", file=sys.stderr)
        return RUNTIME


if __name__ == "__main__":
    sys.exit(main())
