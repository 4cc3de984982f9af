# -*- coding: utf-8 -*-
"""
Bit-exact file formats: PFM disparity maps, binary PGM images and the UQT1
tensor container.

UQT1 layout (all integers little-endian):

    magic       4 bytes  b"UQT1"
    version     u16      1
    n_sections  u16
    per section:
      name_len  u16, name (utf-8)
      dtype     u8       0 = f32, 1 = f64
      rank      u8
      dims      u64 x rank
      length    u64      payload bytes = prod(dims) x itemsize
      payload   row-major little-endian values

Readers translate every low-level failure into a StorageError and never read
past the declared payload.
"""
import logging
import math
import os
import re
import struct
from typing import BinaryIO, Dict, List, Optional, Tuple

import numpy as np
import numpy.typing as npt

from src.distribution import BinLayout, ProbabilityVolume
from src.errors import (
    BadHeader,
    BadMagic,
    DimOverflow,
    DuplicateSection,
    EmptyDims,
    TruncatedPayload,
    UnsupportedMaxval,
    VersionMismatch,
)
from src.kernel_uq import EmbeddingBank, KernelSpec
from src.matcher import HeadParameters

__all__: List[str] = [
    "CONTAINER_MAGIC",
    "CONTAINER_VERSION",
    "read_pfm",
    "write_pfm",
    "read_pgm",
    "write_pgm",
    "encode_container",
    "decode_container",
    "save_container",
    "load_container",
    "save_volume",
    "load_volume",
    "save_head",
    "load_head",
    "save_bank",
    "load_bank",
]

logger = logging.getLogger(__name__)

Sections = Dict[str, npt.NDArray[np.floating]]

CONTAINER_MAGIC = b"UQT1"
CONTAINER_VERSION = 1
DTYPES: Dict[int, np.dtype] = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
MAX_BYTES = 1 << 40
SCHEME_CODES = {"uniform": 0.0, "index-range": 1.0}
FAMILY_CODES = {"rbf": 0.0, "epanechnikov": 1.0, "polynomial": 2.0}


def _ensure_parent(path: str) -> None:
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)


def _read_line(stream: BinaryIO, what: str) -> bytes:
    line = stream.readline(256)
    if not line.endswith(b"\n"):
        raise BadHeader(f"{what}: header line missing or too long")
    return line.rstrip(b"\r\n")


# impure
def read_pfm(path: str) -> npt.NDArray[np.float32]:
    """Grayscale PFM ("Pf") as an H x W float32 map, top row first."""
    with open(path, "rb") as stream:
        magic = _read_line(stream, path)
        if magic != b"Pf":
            raise BadMagic(f"{path}: expected grayscale PFM magic 'Pf', got {magic[:8]!r}")
        try:
            width, height = (int(v) for v in _read_line(stream, path).split())
            scale = float(_read_line(stream, path))
        except ValueError as exc:
            raise BadHeader(f"{path}: unparsable PFM header ({exc})") from exc
        if width < 1 or height < 1 or scale == 0.0 or not math.isfinite(scale):
            raise BadHeader(f"{path}: invalid PFM dims {width}x{height} or scale {scale}")
        dtype = np.dtype("<f4") if scale < 0 else np.dtype(">f4")
        expected = width * height * 4
        if expected > MAX_BYTES:
            raise DimOverflow(f"{path}: PFM dims {width}x{height} overflow")
        remaining = os.fstat(stream.fileno()).st_size - stream.tell()
        if expected > remaining:
            raise TruncatedPayload(f"{path}: expected {expected} payload bytes, found {remaining}")
        payload = stream.read(expected)

    rows = np.frombuffer(payload, dtype=dtype).reshape(height, width)
    data = np.flipud(rows).astype(np.float32)
    if np.any(np.isnan(data)):
        logger.warning("%s contains %d NaN values", path, int(np.count_nonzero(np.isnan(data))))
    return data


# impure
def write_pfm(data: npt.ArrayLike, path: str) -> None:
    """Little-endian PFM (scale -1.0), rows stored bottom-up."""
    image = np.asarray(data, dtype=np.float32)
    if image.ndim != 2 or image.size == 0:
        raise EmptyDims(f"PFM needs a non-empty 2-D map, got shape {image.shape}")
    height, width = image.shape
    _ensure_parent(path)
    with open(path, "wb") as stream:
        stream.write(f"Pf\n{width} {height}\n-1.0\n".encode("ascii"))
        stream.write(np.flipud(image).astype("<f4").tobytes())


_PGM_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


# impure
def read_pgm(path: str) -> npt.NDArray[np.uint8]:
    """Binary P5 PGM with maxval 255; comment lines in the header are skipped."""
    with open(path, "rb") as stream:
        raw = stream.read()
    if raw[:2] != b"P5":
        raise BadMagic(f"{path}: expected binary PGM magic 'P5', got {raw[:2]!r}")

    pos = 2
    values = []
    for _ in range(3):
        match = _PGM_TOKEN.match(raw, pos)
        if match is None:
            raise BadHeader(f"{path}: PGM header ended early")
        try:
            values.append(int(match.group(1)))
        except ValueError as exc:
            raise BadHeader(f"{path}: unparsable PGM header token {match.group(1)[:16]!r}") from exc
        pos = match.end()
    width, height, maxval = values
    if pos >= len(raw) or not raw[pos : pos + 1].isspace():
        raise BadHeader(f"{path}: PGM header must end with a single whitespace byte")
    pos += 1
    if maxval != 255:
        raise UnsupportedMaxval(f"{path}: only maxval 255 is supported, got {maxval}")
    if width < 1 or height < 1:
        raise BadHeader(f"{path}: invalid PGM dims {width}x{height}")

    expected = width * height
    payload = raw[pos : pos + expected]
    if len(payload) < expected:
        raise TruncatedPayload(f"{path}: expected {expected} payload bytes, found {len(payload)}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width).copy()


# impure
def write_pgm(image: npt.ArrayLike, path: str) -> None:
    img = np.asarray(image)
    if img.ndim != 2 or img.size == 0:
        raise EmptyDims(f"PGM needs a non-empty 2-D image, got shape {img.shape}")
    height, width = img.shape
    _ensure_parent(path)
    with open(path, "wb") as stream:
        stream.write(f"P5\n{width} {height}\n255\n".encode("ascii"))
        stream.write(np.clip(img, 0, 255).astype(np.uint8).tobytes())


def encode_container(sections: Sections) -> bytes:
    """Serialises named f32/f64 arrays; f32 stays f32, anything else is stored as f64."""
    parts = [CONTAINER_MAGIC, struct.pack("<HH", CONTAINER_VERSION, len(sections))]
    for name, value in sections.items():
        array = np.asarray(value)
        if array.ndim == 0 or 0 in array.shape:
            raise EmptyDims(f"section {name!r} has empty dims {array.shape}")
        if array.ndim > 255:
            raise DimOverflow(f"section {name!r} has rank {array.ndim} > 255")
        code = 0 if array.dtype == np.float32 else 1
        payload = np.ascontiguousarray(array, dtype=DTYPES[code]).tobytes()
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)) + encoded)
        parts.append(struct.pack("<BB", code, array.ndim))
        parts.append(struct.pack(f"<{array.ndim}Q", *array.shape))
        parts.append(struct.pack("<Q", len(payload)))
        parts.append(payload)
    return b"".join(parts)


class _Reader:
    """Bounded cursor over container bytes."""

    def __init__(self, data: bytes, origin: str) -> None:
        self.data = data
        self.pos = 0
        self.origin = origin

    def take(self, n: int, what: str) -> bytes:
        if n > len(self.data) - self.pos:
            raise TruncatedPayload(f"{self.origin}: truncated while reading {what}")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, what: str) -> Tuple[int, ...]:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode_container(data: bytes, origin: str = "<bytes>") -> Sections:
    reader = _Reader(data, origin)
    if reader.take(4, "magic") != CONTAINER_MAGIC:
        raise BadMagic(f"{origin}: not a UQT1 container")
    version, count = reader.unpack("<HH", "header")
    if version != CONTAINER_VERSION:
        raise VersionMismatch(f"{origin}: container version {version}, expected {CONTAINER_VERSION}")

    sections: Sections = {}
    for _ in range(count):
        (name_len,) = reader.unpack("<H", "section name length")
        try:
            name = reader.take(name_len, "section name").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise BadHeader(f"{origin}: section name is not utf-8") from exc
        if name in sections:
            raise DuplicateSection(f"{origin}: section {name!r} appears twice")
        code, rank = reader.unpack("<BB", f"section {name!r} header")
        if code not in DTYPES:
            raise BadHeader(f"{origin}: section {name!r} has unknown dtype code {code}")
        if rank == 0:
            raise EmptyDims(f"{origin}: section {name!r} has rank 0")
        dims = reader.unpack(f"<{rank}Q", f"section {name!r} dims")
        if 0 in dims:
            raise EmptyDims(f"{origin}: section {name!r} has a zero dimension {dims}")
        (length,) = reader.unpack("<Q", f"section {name!r} length")
        dtype = DTYPES[code]
        n_bytes = dtype.itemsize
        for d in dims:
            n_bytes *= d
            if n_bytes > MAX_BYTES:
                raise DimOverflow(f"{origin}: section {name!r} dims {dims} overflow")
        if length != n_bytes:
            raise BadHeader(f"{origin}: section {name!r} declares {length} bytes, dims need {n_bytes}")
        payload = reader.take(length, f"section {name!r} payload")
        sections[name] = np.frombuffer(payload, dtype=dtype).reshape(dims).copy()
    return sections


# impure
def save_container(sections: Sections, path: str) -> None:
    data = encode_container(sections)
    _ensure_parent(path)
    with open(path, "wb") as stream:
        stream.write(data)


# impure
def load_container(path: str) -> Sections:
    with open(path, "rb") as stream:
        return decode_container(stream.read(), path)


def _require(sections: Sections, names: List[str], origin: str) -> None:
    missing = [n for n in names if n not in sections]
    if missing:
        raise BadHeader(f"{origin}: container lacks sections {missing}")


def _layout_sections(layout: BinLayout) -> Sections:
    meta = np.array([layout.alpha, layout.beta, layout.count, SCHEME_CODES[layout.scheme]])
    return {"layout.edges": np.asarray(layout.edges, dtype=np.float64), "layout.meta": meta}


def _layout_from(sections: Sections, origin: str) -> BinLayout:
    _require(sections, ["layout.edges", "layout.meta"], origin)
    alpha, beta, count, code = (float(v) for v in sections["layout.meta"])
    schemes = {v: k for k, v in SCHEME_CODES.items()}
    if code not in schemes:
        raise BadHeader(f"{origin}: unknown bin scheme code {code}")
    return BinLayout(alpha=alpha, beta=beta, count=int(count), edges=sections["layout.edges"], scheme=schemes[code])


# impure
def save_volume(volume: ProbabilityVolume, path: str, extra: Optional[Sections] = None) -> None:
    """PMF volume as f32 plus its layout; ``extra`` adds maps such as U_d or embeddings."""
    sections: Sections = {"pmf": volume.mass.astype(np.float32)}
    sections.update(_layout_sections(volume.layout))
    for name, value in (extra or {}).items():
        if name in sections:
            raise DuplicateSection(f"section {name!r} is reserved")
        sections[name] = value
    save_container(sections, path)


# impure
def load_volume(path: str) -> Tuple[ProbabilityVolume, Sections]:
    """Volume and every other section of the file."""
    sections = load_container(path)
    _require(sections, ["pmf"], path)
    layout = _layout_from(sections, path)
    # f32 rounding can move sums by ~1e-7; renormalise in f64.
    mass = sections["pmf"].astype(np.float64)
    mass /= np.sum(mass, axis=-1, keepdims=True)
    volume = ProbabilityVolume(mass=mass, layout=layout)
    rest = {k: v for k, v in sections.items() if k not in ("pmf", "layout.edges", "layout.meta")}
    return volume, rest


# impure
def save_head(head: HeadParameters, layout: BinLayout, path: str) -> None:
    sections: Sections = {"head.w1": head.w1, "head.b1": head.b1, "head.w2": head.w2, "head.b2": head.b2}
    sections.update(_layout_sections(layout))
    save_container(sections, path)


# impure
def load_head(path: str) -> Tuple[HeadParameters, BinLayout]:
    sections = load_container(path)
    _require(sections, ["head.w1", "head.b1", "head.w2", "head.b2"], path)
    head = HeadParameters(
        w1=sections["head.w1"], b1=sections["head.b1"], w2=sections["head.w2"], b2=sections["head.b2"]
    )
    return head, _layout_from(sections, path)


# impure
def save_bank(bank: EmbeddingBank, spec: KernelSpec, path: str) -> None:
    """Bank points and labels in f64, the source count and the kernel spec."""
    kernel = np.array(
        [
            FAMILY_CODES[spec.family],
            spec.bandwidth,
            spec.degree,
            spec.offset,
            spec.knn,
            spec.risk_constant,
            spec.density_floor,
            spec.cap,
        ]
    )
    save_container(
        {
            "bank.points": bank.points,
            "bank.labels": bank.labels,
            "bank.source_count": np.array([float(bank.source_count)]),
            "kernel.spec": kernel,
        },
        path,
    )


# impure
def load_bank(path: str) -> Tuple[EmbeddingBank, KernelSpec]:
    sections = load_container(path)
    _require(sections, ["bank.points", "bank.labels", "bank.source_count", "kernel.spec"], path)
    values = sections["kernel.spec"]
    if values.shape != (8,):
        raise BadHeader(f"{path}: kernel spec section has shape {values.shape}")
    families = {v: k for k, v in FAMILY_CODES.items()}
    family_code = float(values[0])
    if family_code not in families:
        raise BadHeader(f"{path}: unknown kernel family code {family_code}")
    spec = KernelSpec(
        family=families[family_code],
        bandwidth=float(values[1]),
        degree=int(values[2]),
        offset=float(values[3]),
        knn=int(values[4]),
        risk_constant=float(values[5]),
        density_floor=float(values[6]),
        cap=float(values[7]),
    )
    bank = EmbeddingBank(
        points=sections["bank.points"],
        labels=sections["bank.labels"],
        source_count=int(sections["bank.source_count"][0]),
    )
    return bank, spec
