# -*- coding: utf-8 -*-
"""
Evaluation metrics: endpoint error, sparsification curves, AUSE and
central-interval coverage.
"""
from typing import List, NamedTuple, Optional, Tuple

import numpy as np
import numpy.typing as npt

from src.distribution import ProbabilityVolume, central_interval
from src.errors import DimensionMismatch, EmptyInput, EmptyMask, ZeroNormalizer

__all__: List[str] = [
    "SparsificationCurve",
    "SPARSIFICATION_STEPS",
    "valid_mask",
    "epe",
    "sparsification",
    "ause",
    "coverage",
    "coverage_95ci",
]

FloatArray = npt.NDArray[np.float64]
BoolArray = npt.NDArray[np.bool_]

SPARSIFICATION_STEPS = 100


class SparsificationCurve(NamedTuple):
    """Mean EPE of the retained pixels after removing each fraction."""

    fractions: FloatArray
    mean_epe: FloatArray


def valid_mask(gt: npt.ArrayLike, mask: Optional[npt.ArrayLike] = None) -> BoolArray:
    """Pixels with a finite ground truth, intersected with ``mask``."""
    truth = np.asarray(gt, dtype=np.float64)
    valid: BoolArray = np.isfinite(truth)
    if mask is not None:
        m = np.asarray(mask, dtype=bool)
        if m.shape != truth.shape:
            raise DimensionMismatch(f"mask {m.shape} does not match ground truth {truth.shape}")
        valid = valid & m
    if not np.any(valid):
        raise EmptyMask("no pixel with a valid ground truth inside the mask")
    return valid


def epe(
    pred: npt.ArrayLike, gt: npt.ArrayLike, mask: Optional[npt.ArrayLike] = None
) -> Tuple[FloatArray, float]:
    """
    Per-pixel |pred - gt| and its mean over the valid pixels.

    The per-pixel map is NaN wherever the pixel is excluded.
    """
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    if p.shape != g.shape:
        raise DimensionMismatch(f"prediction {p.shape} and ground truth {g.shape} differ")
    valid = valid_mask(g, mask)
    errors = np.full(g.shape, np.nan)
    errors[valid] = np.abs(p[valid] - g[valid])
    return errors, float(np.mean(errors[valid]))


def _removal_counts(n: int) -> npt.NDArray[np.int64]:
    """Pixels removed at each of the 100 steps: floor(n/100) per step, never all of them."""
    step = max(1, n // SPARSIFICATION_STEPS)
    return np.minimum(np.arange(SPARSIFICATION_STEPS) * step, n - 1)


def _curve(errors: FloatArray, scores: FloatArray) -> FloatArray:
    # Descending score, ties by pixel index.
    order = np.lexsort((np.arange(errors.size), -scores))
    ranked = errors[order]
    return np.array([np.mean(ranked[removed:]) for removed in _removal_counts(errors.size)])


def sparsification(
    errors: npt.ArrayLike, scores: npt.ArrayLike
) -> Tuple[SparsificationCurve, SparsificationCurve]:
    """
    Estimated curve (pixels removed by descending score) and oracle curve
    (pixels removed by descending error).
    """
    e = np.asarray(errors, dtype=np.float64).ravel()
    s = np.asarray(scores, dtype=np.float64).ravel()
    if e.size == 0:
        raise EmptyInput("sparsification needs at least one pixel")
    if e.shape != s.shape:
        raise DimensionMismatch(f"{e.size} errors but {s.size} scores")
    fractions = np.arange(SPARSIFICATION_STEPS) / SPARSIFICATION_STEPS
    return (
        SparsificationCurve(fractions, _curve(e, s)),
        SparsificationCurve(fractions, _curve(e, e)),
    )


def ause(estimate: SparsificationCurve, oracle: SparsificationCurve, normalizer: float) -> float:
    """Trapezoidal area between the two curves divided by the dataset mean EPE."""
    if estimate.mean_epe.shape != oracle.mean_epe.shape:
        raise DimensionMismatch(
            f"curves differ in length: {estimate.mean_epe.size} vs {oracle.mean_epe.size}"
        )
    if normalizer <= 0:
        raise ZeroNormalizer("mean EPE is zero, AUSE is undefined for perfect predictions")
    gap = np.trapezoid(estimate.mean_epe - oracle.mean_epe, estimate.fractions)
    return float(gap / normalizer)


def coverage(
    volume: ProbabilityVolume,
    gt: npt.ArrayLike,
    mask: Optional[npt.ArrayLike] = None,
    level: float = 0.95,
) -> float:
    """Share of valid pixels whose ground truth falls inside the central ``level`` interval."""
    g = np.asarray(gt, dtype=np.float64)
    if g.shape != volume.mass.shape[:-1]:
        raise DimensionMismatch(f"ground truth {g.shape} does not match volume {volume.mass.shape}")
    valid = valid_mask(g, mask)
    lo, hi = central_interval(volume.mass[valid], volume.layout, level)
    truth = g[valid]
    return float(np.mean((lo <= truth) & (truth <= hi)))


def coverage_95ci(
    volume: ProbabilityVolume, gt: npt.ArrayLike, mask: Optional[npt.ArrayLike] = None
) -> float:
    return coverage(volume, gt, mask, 0.95)
