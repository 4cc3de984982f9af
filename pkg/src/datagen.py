# -*- coding: utf-8 -*-
"""
Synthetic rectified stereo scenes with exact ground-truth disparity.

A left image is textured, a disparity field is drawn, and the right image is
produced by forward-mapping every left pixel w to column w - d(w) and
resampling the visible samples onto the integer grid with linear
interpolation. Left pixels hidden behind nearer ones or mapped out of frame
have no match and get an infinite ground truth.

Label-noise regions perturb the ground truth inside rectangles; by default
the same rectangles are painted flat in the left image, so their labels are
random given the input.
"""
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
import dataclasses
from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Tuple

import numpy as np
import numpy.typing as npt
import pandas as pd

from src.cost_volume import StereoPair
from src.errors import InvalidRange, MissingArtifact, OutOfRangeDisparity
from src.storage import read_pfm, read_pgm, write_pfm, write_pgm

__all__: List[str] = [
    "FIELDS",
    "TEXTURES",
    "IN_DISTRIBUTION_TEXTURES",
    "OOD_TEXTURES",
    "MANIFEST_COLUMNS",
    "NoiseRegion",
    "SceneSpec",
    "Scene",
    "generate",
    "make_splits",
    "spec_from_row",
    "worker_count",
    "write_dataset",
    "read_manifest",
    "scene_path",
    "load_pair",
    "load_scene",
]

logger = logging.getLogger(__name__)

FloatArray = npt.NDArray[np.float64]
BoolArray = npt.NDArray[np.bool_]

FIELDS: Tuple[str, ...] = ("constant", "fronto_parallel", "slanted", "bumps")
TEXTURES: Tuple[str, ...] = ("checker", "value_noise", "stripes")
IN_DISTRIBUTION_TEXTURES: Tuple[str, ...] = ("checker", "value_noise")
OOD_TEXTURES: Tuple[str, ...] = ("stripes",)
SPLIT_FIELDS: Tuple[str, ...] = ("fronto_parallel", "slanted", "bumps")

MANIFEST_COLUMNS = [
    "id",
    "split",
    "seed",
    "texture",
    "field",
    "height",
    "width",
    "alpha",
    "beta",
    "photometric_std",
    "noise_region",
    "left",
    "right",
    "disp",
    "noise",
]

FLAT_INTENSITY = 128.0
CHECKER_CELL = 3


@dataclass(frozen=True)
class NoiseRegion:
    """Rectangle whose labels get Gaussian noise of ``std`` pixels."""

    top: int
    left: int
    height: int
    width: int
    std: float

    def encode(self) -> str:
        return f"{self.top},{self.left},{self.height},{self.width},{self.std!r}"

    @classmethod
    def decode(cls, text: str) -> "NoiseRegion":
        top, left, height, width, std = text.split(",")
        return cls(int(top), int(left), int(height), int(width), float(std))


@dataclass(frozen=True)
class SceneSpec:
    """Everything that determines a scene; two equal specs give identical scenes."""

    seed: int
    height: int = 64
    width: int = 128
    alpha: float = 0.0
    beta: float = 16.0
    field: str = "fronto_parallel"
    texture: str = "checker"
    noise_regions: Tuple[NoiseRegion, ...] = ()
    photometric_std: float = 0.0
    ambiguous_regions: bool = True
    base_disparity: Optional[float] = None
    id: str = dataclasses.field(default="", compare=False)

    def __post_init__(self) -> None:
        if self.field not in FIELDS:
            raise InvalidRange(f"unknown disparity field {self.field!r}; expected one of {FIELDS}")
        if self.texture not in TEXTURES:
            raise InvalidRange(f"unknown texture {self.texture!r}; expected one of {TEXTURES}")
        if self.height < 1 or self.width < 2:
            raise InvalidRange(f"scene size {self.height}x{self.width} is too small")
        if not self.beta - 1 >= self.alpha:
            raise InvalidRange(f"disparity range [{self.alpha}, {self.beta - 1}] is empty")
        if self.photometric_std < 0:
            raise InvalidRange(f"photometric noise std must be >= 0, got {self.photometric_std}")
        for region in self.noise_regions:
            inside = (
                0 <= region.top
                and 0 <= region.left
                and region.height > 0
                and region.width > 0
                and region.top + region.height <= self.height
                and region.left + region.width <= self.width
            )
            if not inside:
                raise InvalidRange(f"noise region {region} lies outside the {self.height}x{self.width} image")
            if region.std < 0:
                raise InvalidRange(f"noise std must be >= 0, got {region.std}")


class Scene(NamedTuple):
    pair: StereoPair
    disparity: FloatArray
    noise_mask: BoolArray
    clean: FloatArray


def _texture(kind: str, height: int, width: int, rng: np.random.Generator) -> FloatArray:
    """Left-image intensities in [0, 255]."""
    if kind == "checker":
        cells = rng.integers(0, 256, size=(-(-height // CHECKER_CELL), -(-width // CHECKER_CELL)))
        grid = np.repeat(np.repeat(cells, CHECKER_CELL, axis=0), CHECKER_CELL, axis=1)
        return grid[:height, :width].astype(np.float64)

    if kind == "value_noise":
        image = np.zeros((height, width))
        total = 0.0
        for scale in (1, 2, 4, 8):
            image += math.sqrt(scale) * _smooth_noise(height, width, scale, rng)
            total += math.sqrt(scale)
        image /= total
        span = float(np.ptp(image))
        return 255.0 * (image - image.min()) / (span if span > 0 else 1.0)

    period = rng.uniform(6.0, 10.0)
    phase = rng.uniform(0.0, 2.0 * math.pi)
    yy, xx = np.mgrid[0:height, 0:width]
    return 127.5 + 127.5 * np.sin(2.0 * math.pi * (xx + yy) / period + phase)


def _smooth_noise(height: int, width: int, scale: int, rng: np.random.Generator) -> FloatArray:
    """Random lattice every ``scale`` pixels, bilinearly interpolated."""
    grid = rng.random((height // scale + 2, width // scale + 2))
    y = np.arange(height) / scale
    x = np.arange(width) / scale
    y0 = np.floor(y).astype(int)
    x0 = np.floor(x).astype(int)
    fy = (y - y0)[:, None]
    fx = (x - x0)[None, :]
    top = grid[y0][:, x0] * (1 - fx) + grid[y0][:, x0 + 1] * fx
    bottom = grid[y0 + 1][:, x0] * (1 - fx) + grid[y0 + 1][:, x0 + 1] * fx
    result: FloatArray = top * (1 - fy) + bottom * fy
    return result


def _disparity_field(spec: SceneSpec, rng: np.random.Generator) -> FloatArray:
    # The cost volume never tests a shift at or below alpha.
    hi = math.floor(spec.beta - 1)
    lo = min(math.floor(spec.alpha) + 1, hi)
    h, w = spec.height, spec.width
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)

    if spec.field == "constant":
        value = spec.base_disparity if spec.base_disparity is not None else float(rng.integers(lo, hi + 1))
        return np.full((h, w), float(value))

    if spec.field == "fronto_parallel":
        background = int(rng.integers(lo, hi + 1))
        foreground = int(rng.integers(lo, hi + 1))
        d = np.full((h, w), float(background))
        rh = int(rng.integers(max(1, h // 4), max(2, h // 2) + 1))
        rw = int(rng.integers(max(1, w // 4), max(2, w // 2) + 1))
        top = int(rng.integers(0, max(1, h - rh + 1)))
        left = int(rng.integers(0, max(1, w - rw + 1)))
        d[top : top + rh, left : left + rw] = float(foreground)
        return d

    if spec.field == "slanted":
        start, end = rng.uniform(lo, hi, size=2)
        tilt = rng.uniform(-0.5, 0.5) * (hi - lo)
        ramp = start + (end - start) * xx / max(1, w - 1) + tilt * (yy / max(1, h - 1) - 0.5)
        return np.clip(ramp, lo, hi)

    d = np.full((h, w), rng.uniform(lo, (lo + hi) / 2.0))
    for _ in range(3):
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        sigma = rng.uniform(0.1, 0.3) * max(h, w)
        amplitude = rng.uniform(0.2, 0.5) * (hi - lo)
        d += amplitude * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * sigma**2))
    return np.clip(d, lo, hi)


def _warp_row(row: FloatArray, disparity: FloatArray) -> Tuple[FloatArray, BoolArray]:
    """Right-image row and the left pixels that stay visible in it."""
    width = row.size
    target = np.arange(width) - disparity
    # Visible iff every pixel further right lands strictly further right.
    suffix_min = np.minimum.accumulate(target[::-1])[::-1]
    later = np.append(suffix_min[1:], np.inf)
    visible = (target < later) & (target >= 0) & (target <= width - 1)
    if not np.any(visible):
        return np.full(width, FLAT_INTENSITY), visible
    right = np.interp(np.arange(width, dtype=np.float64), target[visible], row[visible])
    return right, visible


def _quantize(image: FloatArray) -> npt.NDArray[np.uint8]:
    return np.clip(np.round(image), 0, 255).astype(np.uint8)


def generate(spec: SceneSpec) -> Scene:
    """Renders the scene described by ``spec``; deterministic per seed."""
    rng = np.random.default_rng(spec.seed)
    left = _texture(spec.texture, spec.height, spec.width, rng)
    clean = _disparity_field(spec, rng)
    if np.any(clean < spec.alpha) or np.any(clean > spec.beta - 1):
        raise OutOfRangeDisparity(
            f"disparity field spans [{clean.min()}, {clean.max()}], "
            f"outside [{spec.alpha}, {spec.beta - 1}]"
        )

    noise_mask = np.zeros((spec.height, spec.width), dtype=bool)
    for region in spec.noise_regions:
        rows = slice(region.top, region.top + region.height)
        cols = slice(region.left, region.left + region.width)
        noise_mask[rows, cols] = True
        if spec.ambiguous_regions:
            left[rows, cols] = FLAT_INTENSITY

    right = np.empty_like(left)
    valid = np.zeros_like(noise_mask)
    for h in range(spec.height):
        right[h], valid[h] = _warp_row(left[h], clean[h])

    if spec.photometric_std > 0:
        left = left + rng.normal(0.0, spec.photometric_std, size=left.shape)
        right = right + rng.normal(0.0, spec.photometric_std, size=right.shape)

    labels = clean.copy()
    stds = np.zeros_like(clean)
    for region in spec.noise_regions:
        stds[region.top : region.top + region.height, region.left : region.left + region.width] = region.std
    labels = np.clip(labels + stds * rng.standard_normal(labels.shape), spec.alpha, spec.beta)
    labels[~valid] = np.inf
    noise_mask &= valid

    pair = StereoPair(left=_quantize(left), right=_quantize(right), id=spec.id)
    return Scene(pair=pair, disparity=labels, noise_mask=noise_mask, clean=np.where(valid, clean, np.inf))


def _noise_region(
    height: int, width: int, area: float, std: float, rng: np.random.Generator
) -> Optional[NoiseRegion]:
    if area <= 0:
        return None
    side = math.sqrt(min(area, 1.0))
    rh = max(1, min(height, round(height * side)))
    rw = max(1, min(width, round(width * side)))
    top = int(rng.integers(0, height - rh + 1))
    left = int(rng.integers(0, width - rw + 1))
    return NoiseRegion(top, left, rh, rw, std)


def make_splits(
    n_train: int,
    n_test: int,
    n_ood: int,
    seed: int,
    height: int = 64,
    width: int = 128,
    alpha: float = 0.0,
    beta: float = 16.0,
    photometric_std: float = 1.0,
    noise_area: float = 0.0,
    noise_std: float = 4.0,
) -> pd.DataFrame:
    """
    Manifest of train/test/ood scenes. Train and test share the in-distribution
    textures; ood uses textures never seen in training. With ``noise_area`` > 0
    every train and test scene gets one label-noise rectangle covering that
    share of the image.
    """
    for name, count in (("train", n_train), ("test", n_test), ("ood", n_ood)):
        if count < 1:
            raise InvalidRange(f"need at least one {name} scene, got {count}")

    rng = np.random.default_rng(seed)
    seeds = rng.integers(0, 2**31 - 1, size=n_train + n_test + n_ood)
    rows = []
    index = 0
    for split, count, textures in (
        ("train", n_train, IN_DISTRIBUTION_TEXTURES),
        ("test", n_test, IN_DISTRIBUTION_TEXTURES),
        ("ood", n_ood, OOD_TEXTURES),
    ):
        for i in range(count):
            scene_id = f"{split}_{i:03d}"
            region = None if split == "ood" else _noise_region(height, width, noise_area, noise_std, rng)
            rows.append(
                {
                    "id": scene_id,
                    "split": split,
                    "seed": int(seeds[index]),
                    "texture": textures[i % len(textures)],
                    "field": SPLIT_FIELDS[i % len(SPLIT_FIELDS)],
                    "height": height,
                    "width": width,
                    "alpha": float(alpha),
                    "beta": float(beta),
                    "photometric_std": float(photometric_std),
                    "noise_region": "" if region is None else region.encode(),
                    "left": f"{scene_id}.left.pgm",
                    "right": f"{scene_id}.right.pgm",
                    "disp": f"{scene_id}.disp.pfm",
                    "noise": f"{scene_id}.noise.pgm",
                }
            )
            index += 1
    return pd.DataFrame(rows, columns=MANIFEST_COLUMNS)


def spec_from_row(row: "pd.Series[str]") -> SceneSpec:
    region_text = row["noise_region"]
    regions: Tuple[NoiseRegion, ...] = ()
    if isinstance(region_text, str) and region_text:
        regions = (NoiseRegion.decode(region_text),)
    return SceneSpec(
        seed=int(row["seed"]),
        height=int(row["height"]),
        width=int(row["width"]),
        alpha=float(row["alpha"]),
        beta=float(row["beta"]),
        field=str(row["field"]),
        texture=str(row["texture"]),
        noise_regions=regions,
        photometric_std=float(row["photometric_std"]),
        id=str(row["id"]),
    )


def worker_count() -> int:
    """Thread cap from UQ_THREADS, at least 1."""
    raw = os.environ.get("UQ_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        logger.warning("ignoring non-integer UQ_THREADS=%r", raw)
        return 1


# impure
def _write_scene(row: "pd.Series[str]", root: str) -> str:
    scene = generate(spec_from_row(row))
    write_pgm(scene.pair.left, os.path.join(root, row["left"]))
    write_pgm(scene.pair.right, os.path.join(root, row["right"]))
    write_pfm(scene.disparity, os.path.join(root, row["disp"]))
    write_pgm(scene.noise_mask.astype(np.uint8) * 255, os.path.join(root, row["noise"]))
    return str(row["id"])


# impure
def write_dataset(manifest: pd.DataFrame, root: str) -> None:
    """Renders every scene of ``manifest`` into ``root`` and writes manifest.tsv."""
    os.makedirs(root, exist_ok=True)
    rows = [row for _, row in manifest.iterrows()]
    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        for scene_id in pool.map(lambda r: _write_scene(r, root), rows):
            logger.debug("wrote scene %s", scene_id)
    manifest.to_csv(os.path.join(root, "manifest.tsv"), sep="\t", index=False)
    logger.info("wrote %d scenes to %s", len(rows), root)


# impure
def read_manifest(root: str) -> pd.DataFrame:
    path = os.path.join(root, "manifest.tsv")
    if not os.path.exists(path):
        raise MissingArtifact(f"no manifest at {path}")
    manifest = pd.read_csv(path, sep="\t", dtype={"noise_region": str}, keep_default_na=False)
    missing = [c for c in MANIFEST_COLUMNS if c not in manifest.columns]
    if missing:
        raise MissingArtifact(f"manifest {path} lacks columns {missing}")
    return manifest


# impure
def scene_path(row: "pd.Series[str]", root: str, key: str) -> str:
    """Path of one of a scene's files; raises MissingArtifact when it does not exist."""
    path = os.path.join(root, str(row[key]))
    if not os.path.exists(path):
        raise MissingArtifact(f"scene {row['id']}: missing {key} file {path}")
    return path


# impure
def load_pair(row: "pd.Series[str]", root: str) -> StereoPair:
    left = read_pgm(scene_path(row, root, "left"))
    right = read_pgm(scene_path(row, root, "right"))
    return StereoPair(left=left, right=right, id=str(row["id"]))


# impure
def load_scene(row: "pd.Series[str]", root: str) -> Tuple[StereoPair, FloatArray, BoolArray]:
    """Reads the pair, labels and noise mask of one manifest row."""
    pair = load_pair(row, root)
    labels = read_pfm(scene_path(row, root, "disp")).astype(np.float64)
    return pair, labels, read_pgm(scene_path(row, root, "noise")) > 0


