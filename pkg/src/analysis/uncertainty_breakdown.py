# -*- coding: utf-8 -*-
"""
Breaks evaluated pixels down by region and describes their error and
uncertainty.

Pixels inside planted label-noise regions are labelled ``noisy``, the rest
``clean``. For each region the descriptive statistics of EPE, data
uncertainty and (when available) model uncertainty show whether the
uncertainty concentrates where the labels are unreliable.
"""
import os
from typing import Dict, List, Optional, Sequence

import numpy as np
import numpy.typing as npt
import pandas as pd
from rich.console import Console
from rich.table import Table

from src.analysis.report import SceneResult
from src.errors import DimensionMismatch

__all__: List[str] = ["pixel_frame", "analyze_uncertainty_by_region", "print_breakdown", "write_breakdown_csv"]

BoolArray = npt.NDArray[np.bool_]


def pixel_frame(
    scenes: Sequence[SceneResult], noise_masks: Optional[Sequence[Optional[BoolArray]]] = None
) -> pd.DataFrame:
    """One row per valid pixel: scene, region, epe, ud and um."""
    masks = list(noise_masks) if noise_masks is not None else [None] * len(scenes)
    if len(masks) != len(scenes):
        raise DimensionMismatch(f"{len(scenes)} scenes but {len(masks)} noise masks")

    frames = []
    for scene, noise in zip(scenes, masks):
        valid = np.isfinite(scene.gt)
        region = np.zeros(scene.gt.shape, dtype=bool) if noise is None else np.asarray(noise, dtype=bool)
        if region.shape != scene.gt.shape:
            raise DimensionMismatch(f"noise mask {region.shape} does not match scene {scene.id!r}")
        frame = pd.DataFrame(
            {
                "scene": scene.id,
                "region": np.where(region[valid], "noisy", "clean"),
                "epe": np.abs(scene.disparity[valid] - scene.gt[valid]),
                "ud": scene.data_uncertainty[valid],
            }
        )
        if scene.model_uncertainty is not None:
            frame["um"] = scene.model_uncertainty[valid]
        frames.append(frame)
    return pd.concat(frames, ignore_index=True) if frames else pd.DataFrame()


def analyze_uncertainty_by_region(pixels: pd.DataFrame) -> Dict[str, pd.DataFrame]:
    """Descriptive statistics of epe/ud/um per region."""
    if pixels.empty:
        return {}
    columns = [c for c in ("epe", "ud", "um") if c in pixels.columns and pixels[c].notna().all()]
    analysis_by_region = {}
    for name, group in pixels.groupby("region"):
        analysis_by_region[str(name)] = group[columns].describe()
    return analysis_by_region


# impure
def print_breakdown(analysis_by_region: Dict[str, pd.DataFrame], console: Console) -> None:
    """Prints one table per region."""
    if not analysis_by_region:
        console.print("[yellow]No pixels to break down.[/yellow]")
        return

    for region, stats_df in analysis_by_region.items():
        table = Table(
            title=f"[bold green]{region} pixels[/bold green]",
            show_header=True,
            header_style="bold magenta",
        )
        table.add_column("Statistic", style="cyan")
        for col in stats_df.columns:
            table.add_column(str(col))
        for metric, row in stats_df.iterrows():
            table.add_row(str(metric), *[f"{val:.4f}" for val in row.values])
        console.print(table)


# impure
def write_breakdown_csv(analysis_by_region: Dict[str, pd.DataFrame], out_path: str) -> None:
    """
    One row per (region, feature) with the describe() statistics as columns.
    Nothing is written when there is nothing to describe.
    """
    if not analysis_by_region:
        return

    rows = []
    for region, stats_df in analysis_by_region.items():
        for feature in stats_df.columns:
            row = {"region": region, "feature": feature}
            row.update({str(metric): float(stats_df.at[metric, feature]) for metric in stats_df.index})
            rows.append(row)
    out_dir = os.path.dirname(out_path)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    pd.DataFrame(rows).to_csv(out_path, index=False)
