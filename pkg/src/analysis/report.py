# -*- coding: utf-8 -*-
"""
Summarises an evaluated split into the report row, the sparsification curves
and the AUSE of every available uncertainty score.

Pixels are pooled over every scene of the split before any metric is taken,
so the report describes the split as a single dataset.
"""
import logging
import os
from dataclasses import dataclass
from typing import Dict, List, NamedTuple, Optional, Sequence

import numpy as np
import numpy.typing as npt
import pandas as pd
from rich.console import Console
from rich.table import Table

from src.analysis.metrics import ause, sparsification
from src.distribution import ProbabilityVolume, central_interval, entropy, negative_confidence
from src.errors import DimensionMismatch, EmptyInput, MissingArtifact, ZeroNormalizer
from src.kernel_uq import total_uncertainty

__all__: List[str] = [
    "REPORT_COLUMNS",
    "SceneResult",
    "Summary",
    "summarize",
    "render_summary",
    "write_summary",
]

logger = logging.getLogger(__name__)

FloatArray = npt.NDArray[np.float64]

REPORT_COLUMNS = ["dataset", "split", "epe", "ause", "ci95", "mean_ud", "mean_um", "n_pixels"]


@dataclass(frozen=True, eq=False)
class SceneResult:
    """Everything evaluation needs about one inferred scene."""

    id: str
    disparity: FloatArray
    gt: FloatArray
    volume: ProbabilityVolume
    data_uncertainty: FloatArray
    model_uncertainty: Optional[FloatArray] = None

    def __post_init__(self) -> None:
        shape = self.gt.shape
        maps = [self.disparity, self.data_uncertainty, self.volume.mass[..., 0]]
        if self.model_uncertainty is not None:
            maps.append(self.model_uncertainty)
        for m in maps:
            if m.shape != shape:
                raise DimensionMismatch(f"scene {self.id!r}: map {m.shape} does not match gt {shape}")


class Summary(NamedTuple):
    report: pd.DataFrame
    sparsification: pd.DataFrame
    ause_by_score: pd.DataFrame


def _pooled(scenes: Sequence[SceneResult]) -> Dict[str, FloatArray]:
    columns: Dict[str, List[FloatArray]] = {
        "error": [],
        "ud": [],
        "um": [],
        "entropy": [],
        "negconf": [],
        "covered": [],
    }
    for scene in scenes:
        valid = np.isfinite(scene.gt)
        if not np.any(valid):
            continue
        truth = scene.gt[valid]
        mass = scene.volume.mass[valid]
        lo, hi = central_interval(mass, scene.volume.layout, 0.95)
        columns["error"].append(np.abs(scene.disparity[valid] - truth))
        columns["ud"].append(scene.data_uncertainty[valid])
        if scene.model_uncertainty is not None:
            columns["um"].append(scene.model_uncertainty[valid])
        columns["entropy"].append(entropy(mass))
        columns["negconf"].append(negative_confidence(mass))
        columns["covered"].append(((lo <= truth) & (truth <= hi)).astype(np.float64))
    return {name: np.concatenate(parts) for name, parts in columns.items() if parts}


def _safe_ause(errors: FloatArray, scores: FloatArray, mean_epe: float, name: str) -> float:
    estimate, oracle = sparsification(errors, scores)
    try:
        return ause(estimate, oracle, mean_epe)
    except ZeroNormalizer:
        logger.warning("AUSE of %s undefined: mean EPE is zero", name)
        return float("nan")


def summarize(scenes: Sequence[SceneResult], dataset: str, split: str) -> Summary:
    """
    Report row with EPE, AUSE, 95CI coverage and mean uncertainties.

    The report AUSE ranks pixels by total uncertainty when every scene has a
    model-uncertainty map and by data uncertainty otherwise; the AUSE of every
    available score is listed separately. ``mean_um`` is NaN without model
    uncertainty.
    """
    if len(scenes) == 0:
        raise MissingArtifact(f"no evaluated scenes for split {split!r}")
    pooled = _pooled(scenes)
    if "error" not in pooled:
        raise EmptyInput(f"split {split!r} has no pixel with a valid ground truth")
    has_um = all(s.model_uncertainty is not None for s in scenes)

    errors = pooled["error"]
    mean_epe = float(np.mean(errors))
    scores: Dict[str, FloatArray] = {"ud": pooled["ud"]}
    if has_um:
        scores["um"] = pooled["um"]
        scores["ut"] = total_uncertainty(pooled["ud"], pooled["um"])
    scores["entropy"] = pooled["entropy"]
    scores["negative_confidence"] = pooled["negconf"]

    headline = "ut" if has_um else "ud"
    estimate, oracle = sparsification(errors, scores[headline])
    by_score = {name: _safe_ause(errors, s, mean_epe, name) for name, s in scores.items()}

    report = pd.DataFrame(
        [
            {
                "dataset": dataset,
                "split": split,
                "epe": mean_epe,
                "ause": by_score[headline],
                "ci95": float(np.mean(pooled["covered"])),
                "mean_ud": float(np.mean(pooled["ud"])),
                "mean_um": float(np.mean(pooled["um"])) if has_um else float("nan"),
                "n_pixels": int(errors.size),
            }
        ],
        columns=REPORT_COLUMNS,
    )
    curves = pd.DataFrame(
        {"fraction": estimate.fractions, "est": estimate.mean_epe, "oracle": oracle.mean_epe}
    )
    ause_table = pd.DataFrame(
        {"score": list(by_score.keys()), "ause": list(by_score.values())}, columns=["score", "ause"]
    )
    return Summary(report=report, sparsification=curves, ause_by_score=ause_table)


# impure
def render_summary(summary: Summary, console: Console) -> None:
    """Prints the report row and the per-score AUSE as rich tables."""
    row = summary.report.iloc[0]
    table = Table(title=f"Evaluation: {row['dataset']} / {row['split']}")
    table.add_column("Metric", justify="right", style="cyan", no_wrap=True)
    table.add_column("Value", justify="left", style="magenta")
    table.add_row("EPE (px)", f"{row['epe']:.4f}")
    table.add_row("AUSE", f"{row['ause']:.4f}")
    table.add_row("95CI coverage", f"{row['ci95']:.4f}")
    table.add_row("Mean U_d", f"{row['mean_ud']:.4f}")
    table.add_row("Mean U_m", f"{row['mean_um']:.4f}")
    table.add_row("Pixels", str(row["n_pixels"]))
    console.print(table)

    scores = Table(title="AUSE by uncertainty score")
    scores.add_column("Score", style="cyan")
    scores.add_column("AUSE", style="magenta")
    for _, entry in summary.ause_by_score.iterrows():
        scores.add_row(str(entry["score"]), f"{entry['ause']:.4f}")
    console.print(scores)


# impure
def write_summary(summary: Summary, out_dir: str) -> None:
    """Writes report.csv, sparsification.csv and ause_by_score.csv into ``out_dir``."""
    os.makedirs(out_dir, exist_ok=True)
    summary.report.to_csv(os.path.join(out_dir, "report.csv"), index=False)
    summary.sparsification.to_csv(os.path.join(out_dir, "sparsification.csv"), index=False)
    summary.ause_by_score.to_csv(os.path.join(out_dir, "ause_by_score.csv"), index=False)
