# -*- coding: utf-8 -*-
"""
Uncertainty-aware stereo matching pipeline.

Subcommands:
    synth    render a synthetic train/test/ood dataset with a manifest
    train    fit the ordinal-regression matching head on the train split
    infer    disparity, PMF volume, data uncertainty and embeddings per scene
    fit-uq   build the embedding bank for kernel model uncertainty
    eval     EPE, AUSE, 95CI coverage and uncertainty summaries for a split

Usage:
    python stereo_uq.py synth --train 5 --test 2 --ood 2 --seed 42 --out data/
    python stereo_uq.py train --data data/ --out runs/
    python stereo_uq.py infer --data data/ --head runs/head.uqt --split test --out runs/test
    python stereo_uq.py infer --data data/ --head runs/head.uqt --split train --out runs/train
    python stereo_uq.py fit-uq --data data/ --inferred runs/train --out runs/
    python stereo_uq.py eval --data data/ --inferred runs/test --split test --bank runs/bank.uqt --out runs/test
"""
import argparse
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Optional, Tuple

import numpy as np
import numpy.typing as npt
import pandas as pd
from rich.console import Console
from rich.table import Table

from src.analysis.report import SceneResult, render_summary, summarize, write_summary
from src.analysis.uncertainty_breakdown import (
    analyze_uncertainty_by_region,
    pixel_frame,
    print_breakdown,
    write_breakdown_csv,
)
from src.config import RunConfig, config_keys, load_config
from src.console import configure_logging, make_console
from src.datagen import load_pair, load_scene, make_splits, read_manifest, worker_count, write_dataset
from src.distribution import BinLayout
from src.errors import MissingArtifact, StereoUQError
from src.kernel_uq import UqEstimator, build_bank, fit, median_bandwidth, uq_map
from src.matcher import HeadParameters, infer, train
from src.storage import load_bank, load_head, load_volume, read_pfm, save_bank, save_head, save_volume, write_pfm

logger = logging.getLogger("stereo_uq")

BoolArray = npt.NDArray[np.bool_]


def _split_rows(manifest: pd.DataFrame, split: str) -> List["pd.Series[str]"]:
    rows = [row for _, row in manifest[manifest["split"] == split].iterrows()]
    if not rows:
        raise MissingArtifact(f"manifest has no scenes in split {split!r}")
    return rows


def _volume_path(inferred: str, scene_id: str) -> str:
    return os.path.join(inferred, f"{scene_id}.uq.uqt")


def _disparity_path(inferred: str, scene_id: str) -> str:
    return os.path.join(inferred, f"{scene_id}.disp.pfm")


def _require_file(path: str, what: str) -> str:
    if not os.path.exists(path):
        raise MissingArtifact(f"missing {what}: {path}")
    return path


# impure
def cmd_synth(args: argparse.Namespace, config: RunConfig, console: Console) -> None:
    """Renders the dataset and its manifest into --out."""
    manifest = make_splits(
        args.train,
        args.test,
        args.ood,
        args.seed,
        height=config.data_height,
        width=config.data_width,
        alpha=config.bins_alpha,
        beta=config.bins_beta,
        photometric_std=args.photometric_std,
        noise_area=args.noise_area,
        noise_std=args.noise_std,
    )
    write_dataset(manifest, args.out)
    counts = manifest["split"].value_counts()
    table = Table(title=f"Synthetic dataset in {args.out}")
    table.add_column("Split", style="cyan")
    table.add_column("Scenes", style="magenta")
    for split in ("train", "test", "ood"):
        table.add_row(split, str(int(counts.get(split, 0))))
    console.print(table)


# impure
def cmd_train(args: argparse.Namespace, config: RunConfig, console: Console) -> None:
    """Trains the head on the train split; writes head.uqt and training_log.csv."""
    manifest = read_manifest(args.data)
    layout = config.layout()
    pairs = []
    labels = []
    for row in _split_rows(manifest, "train"):
        pair, disparity, _ = load_scene(row, args.data)
        pairs.append(pair)
        labels.append(disparity)

    head, log = train(pairs, labels, layout, config.train_config())
    os.makedirs(args.out, exist_ok=True)
    save_head(head, layout, os.path.join(args.out, "head.uqt"))
    log.to_csv(os.path.join(args.out, "training_log.csv"), index=False)

    table = Table(title="Training")
    table.add_column("Metric", justify="right", style="cyan", no_wrap=True)
    table.add_column("First epoch", style="magenta")
    table.add_column("Last epoch", style="magenta")
    for column in ("loss", "epe", "mean_ud", "masked_fraction"):
        table.add_row(column, f"{log[column].iloc[0]:.4f}", f"{log[column].iloc[-1]:.4f}")
    console.print(table)


# impure
def _infer_scene(
    row: "pd.Series[str]", data: str, out: str, head: HeadParameters, layout: BinLayout, window: int
) -> str:
    result = infer(head, load_pair(row, data), layout, window)
    scene_id = str(row["id"])
    write_pfm(result.disparity, _disparity_path(out, scene_id))
    save_volume(
        result.volume,
        _volume_path(out, scene_id),
        extra={"ud": result.data_uncertainty, "embeddings": result.embeddings},
    )
    return scene_id


# impure
def cmd_infer(args: argparse.Namespace, config: RunConfig, console: Console) -> None:
    """Writes <id>.disp.pfm and <id>.uq.uqt for every scene of --split."""
    head, layout = load_head(_require_file(args.head, "head parameters"))
    rows = _split_rows(read_manifest(args.data), args.split)
    os.makedirs(args.out, exist_ok=True)
    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        done = list(
            pool.map(
                lambda r: _infer_scene(r, args.data, args.out, head, layout, config.matcher_window), rows
            )
        )
    console.print(f"Inferred {len(done)} {args.split} scenes into {args.out}")


# impure
def cmd_fit_uq(args: argparse.Namespace, config: RunConfig, console: Console) -> None:
    """Builds the embedding bank from the inferred scenes of --split; writes bank.uqt."""
    rows = _split_rows(read_manifest(args.data), args.split)
    embeddings = []
    labels = []
    for row in rows:
        _, disparity, _ = load_scene(row, args.data)
        _, sections = load_volume(_require_file(_volume_path(args.inferred, str(row["id"])), "inference output"))
        if "embeddings" not in sections:
            raise MissingArtifact(f"inference output for {row['id']} has no embeddings")
        embeddings.append(sections["embeddings"])
        labels.append(disparity)

    bank = build_bank(embeddings, labels, cap=config.bank_cap, seed=config.train_seed)
    bandwidth: Optional[float] = None
    if config.kernel_bandwidth is None:
        bandwidth = median_bandwidth(bank)
        logger.info("selected bandwidth h=%.4f from the bank", bandwidth)
    spec = config.kernel_spec(bandwidth)
    fit(bank, spec)
    os.makedirs(args.out, exist_ok=True)
    save_bank(bank, spec, os.path.join(args.out, "bank.uqt"))

    table = Table(title="Embedding bank")
    table.add_column("Field", justify="right", style="cyan")
    table.add_column("Value", style="magenta")
    table.add_row("Bank size M", str(bank.size))
    table.add_row("Source pixels N", str(bank.source_count))
    table.add_row("Embedding dim", str(bank.dim))
    table.add_row("Kernel", f"{spec.family} h={spec.bandwidth:.4g} knn={spec.knn}")
    console.print(table)


# impure
def _evaluate_scene(
    row: "pd.Series[str]", data: str, inferred: str, estimator: Optional[UqEstimator]
) -> Tuple[SceneResult, BoolArray]:
    _, gt, noise = load_scene(row, data)
    scene_id = str(row["id"])
    disparity = read_pfm(_require_file(_disparity_path(inferred, scene_id), "disparity map")).astype(np.float64)
    volume, sections = load_volume(_require_file(_volume_path(inferred, scene_id), "inference output"))
    if "ud" not in sections:
        raise MissingArtifact(f"inference output for {scene_id} has no data-uncertainty map")
    um = None
    if estimator is not None:
        if "embeddings" not in sections:
            raise MissingArtifact(f"inference output for {scene_id} has no embeddings")
        um = uq_map(estimator, sections["embeddings"])
    scene = SceneResult(
        id=scene_id,
        disparity=disparity,
        gt=gt,
        volume=volume,
        data_uncertainty=sections["ud"].astype(np.float64),
        model_uncertainty=um,
    )
    return scene, noise


# impure
def cmd_eval(args: argparse.Namespace, config: RunConfig, console: Console) -> None:
    """Writes report.csv, sparsification.csv, ause_by_score.csv and uncertainty_breakdown.csv."""
    manifest = read_manifest(args.data)
    rows = _split_rows(manifest, args.split)
    estimator = None
    if args.bank is not None:
        bank, spec = load_bank(_require_file(args.bank, "embedding bank"))
        estimator = fit(bank, spec)

    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        evaluated = list(pool.map(lambda r: _evaluate_scene(r, args.data, args.inferred, estimator), rows))
    scenes = [scene for scene, _ in evaluated]
    noise_masks = [noise for _, noise in evaluated]

    dataset = os.path.basename(os.path.normpath(args.data))
    summary = summarize(scenes, dataset, args.split)
    write_summary(summary, args.out)
    render_summary(summary, console)

    breakdown = analyze_uncertainty_by_region(pixel_frame(scenes, noise_masks))
    write_breakdown_csv(breakdown, os.path.join(args.out, "uncertainty_breakdown.csv"))
    print_breakdown(breakdown, console)


def _positive_count(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=str, default=None, help="Path to a key = value config file.")
    common.add_argument("--out", type=str, default="out", help="Output directory (default: out).")
    common.add_argument("--verbose", action="store_true", help="Log at DEBUG level.")
    for key in config_keys():
        common.add_argument(f"--{key}", dest=key, default=None, metavar="VALUE", help=f"Override {key}.")

    parser = argparse.ArgumentParser(description="Uncertainty-aware stereo matching")
    commands = parser.add_subparsers(dest="command", required=True)

    synth = commands.add_parser("synth", parents=[common], help="Render a synthetic dataset.")
    synth.add_argument("--train", type=_positive_count, required=True, help="Number of train scenes.")
    synth.add_argument("--test", type=_positive_count, required=True, help="Number of test scenes.")
    synth.add_argument("--ood", type=_positive_count, required=True, help="Number of ood scenes.")
    synth.add_argument("--seed", type=int, default=42, help="Dataset seed (default: 42).")
    synth.add_argument("--noise-area", type=float, default=0.0, help="Image share of planted label noise.")
    synth.add_argument("--noise-std", type=float, default=4.0, help="Label-noise std in pixels.")
    synth.add_argument("--photometric-std", type=float, default=1.0, help="Image noise std.")
    synth.set_defaults(handler=cmd_synth)

    train_cmd = commands.add_parser("train", parents=[common], help="Train the matching head.")
    train_cmd.add_argument("--data", type=str, required=True, help="Dataset directory with manifest.tsv.")
    train_cmd.set_defaults(handler=cmd_train)

    infer_cmd = commands.add_parser("infer", parents=[common], help="Run the head on a split.")
    infer_cmd.add_argument("--data", type=str, required=True, help="Dataset directory with manifest.tsv.")
    infer_cmd.add_argument("--head", type=str, required=True, help="Trained head (.uqt).")
    infer_cmd.add_argument("--split", type=str, default="test", help="Manifest split (default: test).")
    infer_cmd.set_defaults(handler=cmd_infer)

    fit_cmd = commands.add_parser("fit-uq", parents=[common], help="Build the embedding bank.")
    fit_cmd.add_argument("--data", type=str, required=True, help="Dataset directory with manifest.tsv.")
    fit_cmd.add_argument("--inferred", type=str, required=True, help="Inference outputs of the split.")
    fit_cmd.add_argument("--split", type=str, default="train", help="Manifest split (default: train).")
    fit_cmd.set_defaults(handler=cmd_fit_uq)

    eval_cmd = commands.add_parser("eval", parents=[common], help="Evaluate a split.")
    eval_cmd.add_argument("--data", type=str, required=True, help="Dataset directory with manifest.tsv.")
    eval_cmd.add_argument("--inferred", type=str, required=True, help="Inference outputs of the split.")
    eval_cmd.add_argument("--split", type=str, default="test", help="Manifest split (default: test).")
    eval_cmd.add_argument("--bank", type=str, default=None, help="Embedding bank for model uncertainty.")
    eval_cmd.set_defaults(handler=cmd_eval)
    return parser


# impure
def main(argv: Optional[List[str]] = None) -> None:
    """Parses arguments, loads the configuration and runs the subcommand."""
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose)
    overrides: Dict[str, str] = {
        key: getattr(args, key) for key in config_keys() if getattr(args, key) is not None
    }
    try:
        config = load_config(args.config, overrides)
        args.handler(args, config, make_console())
    except StereoUQError as exc:
        print(f"error[{exc.code}]: {exc}", file=sys.stderr)
        sys.exit(1)
    except FileNotFoundError as exc:
        print(f"error[missing-artifact]: {exc}", file=sys.stderr)
        sys.exit(1)


if __name__ == "__main__":
    main()
