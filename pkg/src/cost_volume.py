# -*- coding: utf-8 -*-
"""
Census-transform matching costs for rectified stereo pairs.

The cost of bin k is the Hamming distance between the left census descriptor
at (w, h) and the right descriptor at (w - d_k, h), where d_k is the whole
pixel inside bin k. Lookups that fall outside the right image get the maximum
cost.
"""
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np
import numpy.typing as npt

from src.distribution import BinLayout
from src.errors import DimensionMismatch, ImageTooSmall, InvalidRange, NonUniformLayout

__all__: List[str] = [
    "StereoPair",
    "CostVolume",
    "census_transform",
    "bin_disparities",
    "build_cost_volume",
    "normalize_costs",
]

FloatArray = npt.NDArray[np.float64]
BoolArray = npt.NDArray[np.bool_]

# Below this per-pixel spread a cost vector carries no matching information.
FLAT_COST_STD = 1e-8


@dataclass(frozen=True, eq=False)
class StereoPair:
    """Rectified grayscale pair, intensities 0-255."""

    left: npt.NDArray[np.generic]
    right: npt.NDArray[np.generic]
    id: str = ""

    def __post_init__(self) -> None:
        if self.left.ndim != 2 or self.left.shape != self.right.shape:
            raise DimensionMismatch(
                f"pair {self.id!r}: left {self.left.shape} and right {self.right.shape} must be equal 2-D images"
            )

    @property
    def shape(self) -> Tuple[int, int]:
        return (int(self.left.shape[0]), int(self.left.shape[1]))


@dataclass(frozen=True, eq=False)
class CostVolume:
    """H x W x K Hamming costs, one slice per disparity bin."""

    cost: FloatArray
    layout: BinLayout
    bits: int

    def __post_init__(self) -> None:
        if self.cost.ndim != 3 or self.cost.shape[-1] != self.layout.count:
            raise DimensionMismatch(
                f"cost volume {self.cost.shape} does not match {self.layout.count} bins"
            )

    @property
    def height(self) -> int:
        return int(self.cost.shape[0])

    @property
    def width(self) -> int:
        return int(self.cost.shape[1])

    @property
    def disparities(self) -> int:
        return int(self.cost.shape[2])


def census_transform(image: npt.ArrayLike, window: int = 5) -> BoolArray:
    """
    Per-pixel census descriptor: one bit per non-center window position,
    set when that neighbour is brighter than the center. Borders are padded
    by edge replication. Bits are ordered row-major over the window.
    """
    img = np.asarray(image, dtype=np.float64)
    if window < 3 or window % 2 == 0:
        raise InvalidRange(f"census window must be odd and >= 3, got {window}")
    if img.ndim != 2 or img.shape[0] < window or img.shape[1] < window:
        raise ImageTooSmall(f"image {img.shape} is smaller than the {window}x{window} census window")

    h, w = img.shape
    r = window // 2
    padded = np.pad(img, r, mode="edge")
    bits = []
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            if dy == 0 and dx == 0:
                continue
            neighbour = padded[r + dy : r + dy + h, r + dx : r + dx + w]
            bits.append(neighbour > img)
    return np.stack(bits, axis=-1)


def bin_disparities(layout: BinLayout) -> npt.NDArray[np.int64]:
    """
    Integer shift tested by each bin: the one whole pixel inside (t_k, t_{k+1}].

    On integer edges this is the upper edge, so a true shift d is tested by
    the bin the ordinal target assigns to a label d.
    """
    if layout.scheme != "uniform" or not np.allclose(layout.widths, 1.0, rtol=0.0, atol=1e-9):
        raise NonUniformLayout("cost volumes need a uniform layout with one-pixel bins")
    return np.floor(layout.edges[1:] + 1e-9).astype(np.int64)


def build_cost_volume(pair: StereoPair, layout: BinLayout, window: int = 5) -> CostVolume:
    """Hamming cost of matching every left pixel against each bin's shift."""
    shifts = bin_disparities(layout)
    left = census_transform(pair.left, window)
    right = census_transform(pair.right, window)
    h, w, bits = left.shape

    cost = np.full((h, w, layout.count), float(bits))
    cols = np.arange(w)
    for k, d in enumerate(shifts):
        src = cols - d
        inside = (src >= 0) & (src < w)
        if not np.any(inside):
            continue
        mismatches = left[:, inside, :] != right[:, src[inside], :]
        cost[:, inside, k] = np.count_nonzero(mismatches, axis=-1)
    return CostVolume(cost=cost, layout=layout, bits=bits)


def normalize_costs(cost: npt.ArrayLike) -> FloatArray:
    """
    Head input: the negated cost vector scaled to zero mean and unit variance
    per pixel. Flat cost vectors map to all zeros.
    """
    c = np.asarray(cost, dtype=np.float64)
    centred = c - np.mean(c, axis=-1, keepdims=True)
    spread = np.std(c, axis=-1, keepdims=True)
    flat = spread < FLAT_COST_STD
    result: FloatArray = np.where(flat, 0.0, -centred / np.where(flat, 1.0, spread))
    return result
