"""Command-line entry points for the full pipeline.

Exit codes: 0 success, 2 usage or input error, 3 numerical failure during
training. Each command is deterministic given identical inputs and seeds.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import numpy as np

from . import evalkit, glyphworld, trainer
from .decoder import GenerationConfig
from .textkit import TemplateSet

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERIC = 3


class InputError(Exception):
    """Invalid input reported with exit code 2."""


def _load_spec(path: str | None) -> glyphworld.GenerationSpec:
    if path is None:
        return glyphworld.GenerationSpec()
    spec_path = Path(path)
    if not spec_path.exists():
        raise InputError(f"missing spec file {spec_path}")
    return glyphworld.read_manifest(spec_path)


def cmd_synth(args) -> int:
    spec = _load_spec(args.spec)
    if args.seed is not None:
        spec = dataclasses.replace(spec, master_seed=args.seed)
    problems = spec.problems()
    if problems:
        raise InputError("invalid generation spec: " + "; ".join(problems))
    bundle = glyphworld.generate_dataset(spec)
    glyphworld.write_dataset(bundle, args.out)
    print(f"dataset written to {args.out}")
    return EXIT_OK


def _load_bundle(path) -> glyphworld.DatasetBundle:
    try:
        return glyphworld.read_dataset(path)
    except (FileNotFoundError, ValueError) as err:
        raise InputError(str(err)) from err


def cmd_train(args) -> int:
    try:
        config = trainer.load_config(args.config)
    except (FileNotFoundError, ValueError) as err:
        raise InputError(str(err)) from err
    if args.iterations is not None:
        config.iterations = args.iterations
    if args.dataset is not None:
        config.dataset_dir = args.dataset
    if args.out is not None:
        config.out_dir = args.out
    if not config.dataset_dir or not config.out_dir:
        raise InputError("config must provide dataset_dir and out_dir")
    bundle = _load_bundle(config.dataset_dir)
    try:
        run = trainer.Trainer(config, bundle)
    except ValueError as err:
        raise InputError(str(err)) from err
    try:
        _, ckpt = run.fit()
    except trainer.TrainingDiverged as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    print(f"checkpoint written to {ckpt}")
    return EXIT_OK


def _read_images_arg(path) -> np.ndarray:
    path = Path(path)
    if path.is_dir():
        bin_path, hdr_path = path / "images.bin", path / "images.hdr"
    else:
        bin_path, hdr_path = path, path.with_suffix(".hdr")
    try:
        images = glyphworld.read_images(bin_path, hdr_path)
    except (FileNotFoundError, ValueError) as err:
        raise InputError(str(err)) from err
    if len(images) == 0:
        raise InputError(f"image file {bin_path} holds no images")
    return images


def cmd_generate(args) -> int:
    try:
        loaded = trainer.load_checkpoint(args.checkpoint)
    except (FileNotFoundError, ValueError) as err:
        raise InputError(str(err)) from err
    images = _read_images_arg(args.images)
    if images.shape[1] != loaded.config.model.image_size:
        raise InputError(
            f"images are {images.shape[1]}px, checkpoint expects "
            f"{loaded.config.model.image_size}px"
        )
    texts = evalkit.generate_reports(
        loaded.model, images, loaded.vocab, loaded.generation_config()
    )
    Path(args.out).write_text("".join(t + "\n" for t in texts), encoding="utf-8")
    print(f"{len(texts)} reports written to {args.out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cand_path = Path(args.candidates)
    if not cand_path.exists():
        raise InputError(f"missing candidates file {cand_path}")
    candidates = cand_path.read_text(encoding="utf-8").splitlines()
    eval_dir = Path(args.eval_dir)
    try:
        templates = TemplateSet.load(eval_dir / "templates.json")
        references, _ = glyphworld.read_reports(
            eval_dir / "eval" / "reports.txt", len(templates.findings)
        )
        labels = glyphworld.read_labels(eval_dir / "eval" / "labels.txt", len(templates.findings))
    except (FileNotFoundError, ValueError) as err:
        raise InputError(str(err)) from err
    if len(candidates) != len(references):
        raise InputError(
            f"{len(candidates)} candidate lines vs {len(references)} eval references"
        )
    metrics = evalkit.score_texts(candidates, references, labels, templates)
    metrics.save(args.out)
    print(metrics.summary())
    return EXIT_OK


ABLATION_ROWS = [
    ("full", {}),
    ("no_cm", {"use_cm": False}),
    ("no_cyc", {"use_cyc": False}),
    ("no_adv", {"use_adv": False}),
    ("no_ae", {"use_ae": False}),
    ("decode_both", {}),
    ("decode_global_only", {"decode_local": False}),
    ("decode_local_only", {"decode_global": False}),
]


def run_ablation(config: trainer.TrainConfig, bundle, out_dir) -> list[tuple[str, evalkit.MetricsReport]]:
    """Train every ablation row and score it on the paired eval split.

    The full configuration is trained once and reused for the decode_both row.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows: list[tuple[str, evalkit.MetricsReport]] = []
    cache: dict[str, evalkit.MetricsReport] = {}
    for name, overrides in ABLATION_ROWS:
        if name == "decode_both" and "full" in cache:
            rows.append((name, cache["full"]))
            continue
        row_config = dataclasses.replace(config, out_dir=str(out_dir / name), **overrides)
        run = trainer.Trainer(row_config, bundle)
        _, ckpt = run.fit()
        metrics = trainer.evaluate_checkpoint(ckpt, bundle)
        metrics.save(out_dir / name / "metrics.txt")
        cache[name] = metrics
        rows.append((name, metrics))
    return rows


def _ablation_table(rows) -> str:
    header = f"{'row':<20} {'bleu1':>8} {'bleu4':>8} {'meteor':>8} {'rouge_l':>8} {'ce_f1':>8}"
    lines = [header]
    for name, m in rows:
        lines.append(
            f"{name:<20} {m.bleu1:>8.4f} {m.bleu4:>8.4f} {m.meteor:>8.4f} "
            f"{m.rouge_l:>8.4f} {m.ce_f1:>8.4f}"
        )
    return "\n".join(lines) + "\n"


def cmd_ablate(args) -> int:
    try:
        config = trainer.load_config(args.config)
    except (FileNotFoundError, ValueError) as err:
        raise InputError(str(err)) from err
    if not config.dataset_dir:
        raise InputError("config must provide dataset_dir")
    bundle = _load_bundle(config.dataset_dir)
    try:
        rows = run_ablation(config, bundle, args.out)
    except trainer.TrainingDiverged as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    table = _ablation_table(rows)
    table_path = Path(args.out) / "ablation.txt"
    table_path.write_text(table, encoding="utf-8")
    print(table, end="")
    print(f"table written to {table_path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="glyphcycle",
        description="Unpaired image-to-report generation on a synthetic glyph world.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a dataset directory")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--spec", default=None, help="manifest file (defaults used if omitted)")
    p.add_argument("--seed", type=int, default=None, help="override the master seed")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--iterations", type=int, default=None, help="override config iterations")
    p.add_argument("--dataset", default=None, help="override config dataset_dir")
    p.add_argument("--out", default=None, help="override config out_dir")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="generate one report line per image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--images", required=True, help="images.bin file or dataset directory")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", help="score candidate reports against a paired eval split")
    p.add_argument("--candidates", required=True, help="one report per line")
    p.add_argument("--eval-dir", required=True, help="dataset directory with eval/ split")
    p.add_argument("--out", required=True, help="metrics output file")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="train and score all ablation rows")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="output directory for rows and table")
    p.set_defaults(func=cmd_ablate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InputError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
