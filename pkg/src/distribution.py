# -*- coding: utf-8 -*-
"""
Disparity bins and the statistics of a per-pixel disparity distribution.

A PMF is any float array whose last axis holds the K bin probabilities, so
every function here works on a single pixel (shape ``(K,)``) as well as on a
whole volume (shape ``(H, W, K)``).
"""
from dataclasses import dataclass, field
from typing import List, Literal, Optional, Tuple

import numpy as np
import numpy.typing as npt

from src.errors import (
    DimensionMismatch,
    InvalidCoverage,
    InvalidLogRange,
    InvalidPmf,
    InvalidRange,
    TooFewBins,
)

__all__: List[str] = [
    "BinLayout",
    "ProbabilityVolume",
    "Scheme",
    "make_layout",
    "softmax",
    "validate_pmf",
    "cdf",
    "expectation",
    "variance",
    "quantile",
    "central_interval",
    "entropy",
    "negative_confidence",
]

FloatArray = npt.NDArray[np.float64]
Scheme = Literal["uniform", "index-range"]

PMF_SUM_TOLERANCE = 1e-6
SCHEMES: Tuple[str, ...] = ("uniform", "index-range")


@dataclass(frozen=True, eq=False)
class BinLayout:
    """Partition of [alpha, beta] into ``count`` bins B_k = (t_k, t_{k+1}]."""

    alpha: float
    beta: float
    count: int
    edges: FloatArray = field(repr=False)
    scheme: str = "uniform"

    def __post_init__(self) -> None:
        edges = np.array(self.edges, dtype=np.float64)
        if edges.ndim != 1 or len(edges) != self.count + 1:
            raise DimensionMismatch(
                f"layout with {self.count} bins needs {self.count + 1} edges, got {edges.shape}"
            )
        if not np.all(np.diff(edges) > 0):
            raise InvalidRange("bin edges must be strictly increasing")
        if edges[0] != self.alpha or edges[-1] != self.beta:
            raise InvalidRange("first and last edge must equal alpha and beta")
        edges.setflags(write=False)
        object.__setattr__(self, "edges", edges)

    @property
    def midpoints(self) -> FloatArray:
        """(t_k + t_{k+1}) / 2 for every bin."""
        return (self.edges[:-1] + self.edges[1:]) / 2.0

    @property
    def widths(self) -> FloatArray:
        return np.diff(self.edges)

    def midpoint(self, k: int) -> float:
        return float(self.midpoints[k])

    def shifted(self, offset: float) -> "BinLayout":
        """Same partition translated by ``offset`` pixels."""
        return BinLayout(
            alpha=float(self.edges[0] + offset),
            beta=float(self.edges[-1] + offset),
            count=self.count,
            edges=self.edges + offset,
            scheme=self.scheme,
        )

    def scaled(self, factor: float) -> "BinLayout":
        """Same partition with every edge multiplied by ``factor`` > 0."""
        if factor <= 0:
            raise InvalidRange(f"scale factor must be positive, got {factor}")
        return BinLayout(
            alpha=float(self.edges[0] * factor),
            beta=float(self.edges[-1] * factor),
            count=self.count,
            edges=self.edges * factor,
            scheme=self.scheme,
        )


@dataclass(frozen=True, eq=False)
class ProbabilityVolume:
    """Per-pixel PMF over the bins of ``layout``, shape (H, W, K)."""

    mass: FloatArray
    layout: BinLayout

    def __post_init__(self) -> None:
        mass = validate_pmf(self.mass, self.layout.count)
        if mass.ndim != 3:
            raise DimensionMismatch(f"probability volume must be H x W x K, got {mass.shape}")
        object.__setattr__(self, "mass", mass)

    @property
    def height(self) -> int:
        return int(self.mass.shape[0])

    @property
    def width(self) -> int:
        return int(self.mass.shape[1])


def make_layout(alpha: float, beta: float, count: int, scheme: str = "uniform") -> BinLayout:
    """
    Builds the bin edges t_0..t_K.

    uniform:      t_k = alpha + k (beta - alpha) / K
    index-range:  t_k = exp(log alpha + k log(beta / alpha) / K)
    """
    if scheme not in SCHEMES:
        raise InvalidRange(f"unknown bin scheme {scheme!r}; expected one of {SCHEMES}")
    if not beta > alpha:
        raise InvalidRange(f"beta ({beta}) must exceed alpha ({alpha})")
    if count < 2:
        raise TooFewBins(f"need at least 2 bins, got {count}")

    k = np.arange(count + 1, dtype=np.float64)
    if scheme == "uniform":
        edges = alpha + k * (beta - alpha) / count
    else:
        if alpha <= 0:
            raise InvalidLogRange(f"index-range bins need alpha > 0, got {alpha}")
        edges = np.exp(np.log(alpha) + k * np.log(beta / alpha) / count)
    # Pin the end points so they are exact.
    edges[0] = alpha
    edges[-1] = beta
    return BinLayout(alpha=float(alpha), beta=float(beta), count=int(count), edges=edges, scheme=scheme)


def softmax(logits: npt.ArrayLike) -> FloatArray:
    """Numerically stable softmax over the last axis."""
    z = np.asarray(logits, dtype=np.float64)
    shifted = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(shifted)
    result: FloatArray = e / np.sum(e, axis=-1, keepdims=True)
    return result


def validate_pmf(mass: npt.ArrayLike, count: Optional[int] = None) -> FloatArray:
    """Returns ``mass`` as float64 after checking range and normalisation."""
    p = np.asarray(mass, dtype=np.float64)
    if p.ndim == 0 or p.shape[-1] == 0:
        raise InvalidPmf("a PMF needs at least one bin")
    if count is not None and p.shape[-1] != count:
        raise DimensionMismatch(f"PMF has {p.shape[-1]} bins, layout has {count}")
    if not np.all(np.isfinite(p)):
        raise InvalidPmf("PMF contains non-finite entries")
    if np.any(p < 0.0) or np.any(p > 1.0 + 1e-12):
        raise InvalidPmf("PMF entries must lie in [0, 1]")
    totals = np.sum(p, axis=-1)
    worst = float(np.max(np.abs(totals - 1.0)))
    if worst > PMF_SUM_TOLERANCE:
        raise InvalidPmf(f"PMF does not sum to 1 (max deviation {worst:.3g})")
    return p


def cdf(mass: npt.ArrayLike) -> FloatArray:
    """F_k = sum_{j <= k} p_j, the probability that Y <= t_{k+1}."""
    p = validate_pmf(mass)
    result: FloatArray = np.cumsum(p, axis=-1)
    return result


def expectation(mass: npt.ArrayLike, layout: BinLayout) -> FloatArray:
    """Disparity estimate: sum_k midpoint_k p_k."""
    p = validate_pmf(mass, layout.count)
    result: FloatArray = p @ layout.midpoints
    return result


def variance(mass: npt.ArrayLike, layout: BinLayout) -> FloatArray:
    """Data uncertainty: sum_k (midpoint_k - mean)^2 p_k, in pixels squared."""
    p = validate_pmf(mass, layout.count)
    mean = p @ layout.midpoints
    deviation = layout.midpoints - np.asarray(mean)[..., None]
    result: FloatArray = np.sum(deviation * deviation * p, axis=-1)
    return result


def quantile(mass: npt.ArrayLike, layout: BinLayout, q: float) -> FloatArray:
    """
    Inverse CDF under a piecewise-uniform density inside each bin.

    Values are clamped to the support of nonzero mass, so a PMF with empty
    tails never reports a quantile inside an empty bin.
    """
    p = validate_pmf(mass, layout.count)
    k_max = layout.count - 1
    upper = np.cumsum(p, axis=-1)
    lower = upper - p

    idx = np.sum(upper < q, axis=-1)
    nonzero = p > 0
    first = np.argmax(nonzero, axis=-1)
    last = k_max - np.argmax(nonzero[..., ::-1], axis=-1)
    idx = np.asarray(np.clip(idx, first, last))

    m = np.take_along_axis(p, idx[..., None], axis=-1)[..., 0]
    below = np.take_along_axis(lower, idx[..., None], axis=-1)[..., 0]
    frac = np.where(m > 0, (q - below) / np.where(m > 0, m, 1.0), 0.0)
    frac = np.clip(frac, 0.0, 1.0)
    result: FloatArray = layout.edges[idx] + frac * layout.widths[idx]
    return result


def central_interval(
    mass: npt.ArrayLike, layout: BinLayout, coverage: float = 0.95
) -> Tuple[FloatArray, FloatArray]:
    """Disparities bounding the central ``coverage`` share of the probability mass."""
    if not 0.0 < coverage < 1.0:
        raise InvalidCoverage(f"coverage must lie in (0, 1), got {coverage}")
    tail = (1.0 - coverage) / 2.0
    lo = quantile(mass, layout, tail)
    hi = quantile(mass, layout, 1.0 - tail)
    return lo, np.maximum(lo, hi)


def entropy(mass: npt.ArrayLike) -> FloatArray:
    """Shannon entropy in nats, with 0 log 0 = 0."""
    p = validate_pmf(mass)
    logs = np.log(np.where(p > 0, p, 1.0))
    result: FloatArray = -np.sum(p * logs, axis=-1)
    return result


def negative_confidence(mass: npt.ArrayLike) -> FloatArray:
    """-max_k p_k; larger means less confident."""
    p = validate_pmf(mass)
    result: FloatArray = -np.max(p, axis=-1)
    return result
