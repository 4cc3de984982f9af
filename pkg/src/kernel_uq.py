# -*- coding: utf-8 -*-
"""
Model uncertainty from a Nadaraya-Watson kernel regressor on OR embeddings.

The regressor is fitted post hoc on (embedding, label) pairs sampled from the
training images. For a query embedding x the restricted neighbourhood (the knn
nearest bank points) gives

    g(x)     = sum K t_i / sum K                   kernel regression estimate
    s2(x)    = sum K (t_i - g(x))^2 / sum K        local label variance
    p(x)     = sum K / (M h^d Z_K)                 kernel density estimate
    U_m(x)   = 2 sqrt(2/pi * C/N * s2(x) / max(p(x), floor))

Everything is computed in log space for the RBF kernel, so far-away queries
keep meaningful weights instead of underflowing to zero.
"""
import logging
import math
from dataclasses import dataclass
from typing import Iterator, List, NamedTuple, Sequence, Tuple

import numpy as np
import numpy.typing as npt

from src.errors import DimensionMismatch, EmptyBank, InvalidKernelSpec

__all__: List[str] = [
    "EmbeddingBank",
    "KernelSpec",
    "UqQuery",
    "UqEstimator",
    "FAMILIES",
    "build_bank",
    "kernel_eval",
    "fit",
    "median_bandwidth",
    "uq_map",
    "total_uncertainty",
]

logger = logging.getLogger(__name__)

FloatArray = npt.NDArray[np.float64]
FAMILIES: Tuple[str, ...] = ("rbf", "epanechnikov", "polynomial")

DEFAULT_BANK_CAP = 100_000
QUERY_CHUNK = 512
# Relative squared distance below which two embeddings count as the same point.
DUPLICATE_TOLERANCE = 1e-9


@dataclass(frozen=True, eq=False)
class EmbeddingBank:
    """M (embedding, disparity) pairs drawn from ``source_count`` training pixels."""

    points: FloatArray
    labels: FloatArray
    source_count: int

    def __post_init__(self) -> None:
        points = np.asarray(self.points, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.float64)
        if points.ndim != 2 or points.shape[0] == 0:
            raise EmptyBank(f"embedding bank needs an M x d array with M >= 1, got {points.shape}")
        if labels.shape != (points.shape[0],):
            raise DimensionMismatch(f"{points.shape[0]} embeddings but labels of shape {labels.shape}")
        if not (np.all(np.isfinite(points)) and np.all(np.isfinite(labels))):
            raise EmptyBank("embedding bank entries must be finite")
        if self.source_count < points.shape[0]:
            raise DimensionMismatch(
                f"source count {self.source_count} is smaller than the bank size {points.shape[0]}"
            )
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "labels", labels)

    @property
    def size(self) -> int:
        return int(self.points.shape[0])

    @property
    def dim(self) -> int:
        return int(self.points.shape[1])


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family, bandwidth h (or polynomial degree/offset), neighbourhood and risk constant C."""

    family: str = "rbf"
    bandwidth: float = 2.0
    degree: int = 2
    offset: float = 1.0
    knn: int = 50
    risk_constant: float = 1.0
    density_floor: float = 1e-12
    cap: float = 1e6

    def __post_init__(self) -> None:
        if self.family not in FAMILIES:
            raise InvalidKernelSpec(f"unknown kernel family {self.family!r}; expected one of {FAMILIES}")
        if not self.bandwidth > 0:
            raise InvalidKernelSpec(f"bandwidth must be positive, got {self.bandwidth}")
        if self.degree < 1:
            raise InvalidKernelSpec(f"polynomial degree must be >= 1, got {self.degree}")
        if self.knn < 1:
            raise InvalidKernelSpec(f"knn must be >= 1, got {self.knn}")
        if not self.risk_constant > 0:
            raise InvalidKernelSpec(f"risk constant C must be positive, got {self.risk_constant}")
        if self.density_floor < 0:
            raise InvalidKernelSpec(f"density floor must be >= 0, got {self.density_floor}")
        if not self.cap > 0:
            raise InvalidKernelSpec(f"model-uncertainty cap must be positive, got {self.cap}")


class UqQuery(NamedTuple):
    prediction: FloatArray
    sigma2: FloatArray
    density: FloatArray
    model_uncertainty: FloatArray
    clamped: npt.NDArray[np.bool_]


def build_bank(
    embeddings: Sequence[npt.ArrayLike],
    labels: Sequence[npt.ArrayLike],
    cap: int = DEFAULT_BANK_CAP,
    seed: int = 0,
) -> EmbeddingBank:
    """
    Collects every pixel with a finite label and keeps a uniform random
    subset of at most ``cap`` of them. The bank remembers how many pixels it
    was drawn from, which is the N of the excess-risk formula.
    """
    if cap < 1:
        raise InvalidKernelSpec(f"bank cap must be >= 1, got {cap}")
    if len(embeddings) != len(labels):
        raise DimensionMismatch(f"{len(embeddings)} embedding volumes but {len(labels)} label maps")
    points = []
    targets = []
    for volume, label in zip(embeddings, labels):
        e = np.asarray(volume, dtype=np.float64)
        y = np.asarray(label, dtype=np.float64)
        if e.shape[:-1] != y.shape:
            raise DimensionMismatch(f"embeddings {e.shape} do not match labels {y.shape}")
        flat_e = e.reshape(-1, e.shape[-1])
        flat_y = y.reshape(-1)
        keep = np.isfinite(flat_y)
        points.append(flat_e[keep])
        targets.append(flat_y[keep])
    if not points:
        raise EmptyBank("no embedding volumes given")

    all_points = np.concatenate(points)
    all_labels = np.concatenate(targets)
    total = int(all_points.shape[0])
    if total == 0:
        raise EmptyBank("no pixel with a valid label to build the bank from")
    if total > cap:
        rng = np.random.default_rng(seed)
        chosen = np.sort(rng.choice(total, size=cap, replace=False))
        all_points = all_points[chosen]
        all_labels = all_labels[chosen]
    logger.info("embedding bank: %d of %d pixels, d=%d", all_points.shape[0], total, all_points.shape[1])
    return EmbeddingBank(points=all_points, labels=all_labels, source_count=total)


def _log_weights(spec: KernelSpec, sq_dist: FloatArray) -> FloatArray:
    return -sq_dist / (2.0 * spec.bandwidth**2)


def _weights(spec: KernelSpec, sq_dist: FloatArray, dots: FloatArray) -> FloatArray:
    """Raw kernel weights for the compact and polynomial families."""
    if spec.family == "epanechnikov":
        result: FloatArray = np.maximum(0.0, 1.0 - sq_dist / spec.bandwidth**2)
        return result
    powered = (dots + spec.offset) ** spec.degree
    return np.maximum(0.0, powered)


def kernel_eval(spec: KernelSpec, a: npt.ArrayLike, b: npt.ArrayLike) -> float:
    """Kernel weight between two embeddings; always >= 0."""
    u = np.asarray(a, dtype=np.float64)
    v = np.asarray(b, dtype=np.float64)
    if u.shape != v.shape:
        raise DimensionMismatch(f"kernel arguments differ in shape: {u.shape} vs {v.shape}")
    diff = u - v
    sq_dist = np.asarray(np.sum(diff * diff))
    if spec.family == "rbf":
        return float(np.exp(_log_weights(spec, sq_dist)))
    return float(_weights(spec, sq_dist, np.asarray(np.dot(u.ravel(), v.ravel()))))


def _log_normalizer(spec: KernelSpec, dim: int) -> float:
    """log(h^d Z_K); the polynomial kernel is not a density and uses 1."""
    if spec.family == "rbf":
        return dim * math.log(spec.bandwidth) + 0.5 * dim * math.log(2.0 * math.pi)
    if spec.family == "epanechnikov":
        log_ball = 0.5 * dim * math.log(math.pi) - math.lgamma(0.5 * dim + 1.0)
        return dim * math.log(spec.bandwidth) + log_ball + math.log(2.0 / (dim + 2.0))
    return 0.0


class UqEstimator:
    """Fitted kernel regressor; immutable and safe to query from many threads."""

    def __init__(self, bank: EmbeddingBank, spec: KernelSpec) -> None:
        if spec.knn > bank.size:
            raise InvalidKernelSpec(f"knn={spec.knn} exceeds the bank size M={bank.size}")
        self.bank = bank
        self.spec = spec
        self._sq_norms = np.sum(bank.points * bank.points, axis=1)
        self._log_norm = _log_normalizer(spec, bank.dim)

    def _neighbours(self, queries: FloatArray) -> Tuple[npt.NDArray[np.int64], FloatArray]:
        """Indices of the knn nearest bank points and their exact squared distances."""
        m = self.bank.size
        k = self.spec.knn
        if k == m:
            idx = np.broadcast_to(np.arange(m), (queries.shape[0], m))
        else:
            approx = (
                np.sum(queries * queries, axis=1)[:, None]
                + self._sq_norms[None, :]
                - 2.0 * queries @ self.bank.points.T
            )
            idx = np.argpartition(np.maximum(approx, 0.0), k - 1, axis=1)[:, :k]
        diff = self.bank.points[idx] - queries[:, None, :]
        sq_dist = np.sum(diff * diff, axis=-1)
        order = np.lexsort((idx, sq_dist))
        return np.take_along_axis(idx, order, axis=1), np.take_along_axis(sq_dist, order, axis=1)

    def _query_chunk(self, queries: FloatArray) -> UqQuery:
        spec = self.spec
        idx, sq_dist = self._neighbours(queries)
        labels = self.bank.labels[idx]

        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            if spec.family == "rbf":
                log_w = _log_weights(spec, sq_dist)
                top = np.max(log_w, axis=1, keepdims=True)
                w = np.exp(log_w - top)
                log_mass = top[:, 0] + np.log(np.sum(w, axis=1))
            else:
                dots = np.einsum("qkd,qd->qk", self.bank.points[idx], queries)
                w = _weights(spec, sq_dist, dots)
                log_mass = np.log(np.sum(w, axis=1))

            total = np.sum(w, axis=1)
            degenerate = total <= 0
            safe_total = np.where(degenerate, 1.0, total)
            prediction = np.sum(w * labels, axis=1) / safe_total
            # All weights vanished: nearest label, unweighted neighbourhood spread.
            prediction = np.where(degenerate, labels[:, 0], prediction)
            spread = labels - prediction[:, None]
            sigma2 = np.where(
                degenerate,
                np.mean(spread * spread, axis=1),
                np.sum(w * spread * spread, axis=1) / safe_total,
            )

            log_density = log_mass - math.log(self.bank.size) - self._log_norm
            density = np.exp(log_density)
            log_floor = math.log(spec.density_floor) if spec.density_floor > 0 else -math.inf
            log_effective = np.maximum(log_density, log_floor)
            log_um = math.log(2.0) + 0.5 * (
                math.log(2.0 / math.pi)
                + math.log(spec.risk_constant)
                - math.log(self.bank.source_count)
                + np.log(sigma2)
                - log_effective
            )
            um = np.where(sigma2 > 0, np.exp(log_um), 0.0)

        if np.any(degenerate):
            logger.warning(
                "%d queries had no kernel mass in their neighbourhood; used nearest-neighbour labels",
                int(np.count_nonzero(degenerate)),
            )
        clamped = um > spec.cap
        um = np.minimum(um, spec.cap)
        return UqQuery(prediction, sigma2, density, um, clamped)

    def _chunks(self, queries: FloatArray) -> Iterator[FloatArray]:
        for start in range(0, queries.shape[0], QUERY_CHUNK):
            yield queries[start : start + QUERY_CHUNK]

    def query(self, points: npt.ArrayLike) -> UqQuery:
        """Batched prediction, local variance, density and U_m for (Q, d) queries."""
        q = np.atleast_2d(np.asarray(points, dtype=np.float64))
        if q.shape[1] != self.bank.dim:
            raise DimensionMismatch(f"queries have dimension {q.shape[1]}, bank has {self.bank.dim}")
        parts = [self._query_chunk(chunk) for chunk in self._chunks(q)]
        result = UqQuery(*(np.concatenate([getattr(p, f) for p in parts]) for f in UqQuery._fields))
        n_clamped = int(np.count_nonzero(result.clamped))
        if n_clamped:
            logger.warning("%d model-uncertainty values clamped at %g", n_clamped, self.spec.cap)
        return result

    def predict(self, query: npt.ArrayLike) -> float:
        """Kernel regression estimate of the disparity at one embedding."""
        return float(self.query(query).prediction[0])

    def model_uncertainty(self, query: npt.ArrayLike) -> float:
        """U_m at one embedding, in pixels."""
        return float(self.query(query).model_uncertainty[0])


def fit(bank: EmbeddingBank, spec: KernelSpec) -> UqEstimator:
    """Wraps the bank in an estimator restricted to the knn nearest points."""
    return UqEstimator(bank, spec)


def median_bandwidth(bank: EmbeddingBank, neighbours: int = 1, sample: int = 2000, seed: int = 0) -> float:
    """
    Median distance from bank points to their ``neighbours``-th nearest other
    point. Exact duplicates are skipped, so repeated embeddings cannot give a
    zero bandwidth.
    """
    if bank.size < 2:
        raise EmptyBank("bandwidth selection needs at least two bank points")
    j = min(neighbours, bank.size - 1)
    rng = np.random.default_rng(seed)
    rows = np.arange(bank.size)
    if bank.size > sample:
        rows = np.sort(rng.choice(bank.size, size=sample, replace=False))
    sq_norms = np.sum(bank.points * bank.points, axis=1)
    scale = sq_norms[rows, None] + sq_norms[None, :]
    sq_dist = np.maximum(scale - 2.0 * bank.points[rows] @ bank.points.T, 0.0)
    sq_dist[sq_dist <= DUPLICATE_TOLERANCE * scale] = np.inf
    nearest = np.partition(sq_dist, j - 1, axis=1)[:, j - 1]
    nearest = nearest[np.isfinite(nearest)]
    if nearest.size == 0:
        raise InvalidKernelSpec("every bank embedding is a duplicate; no bandwidth can be selected")
    return float(np.sqrt(np.median(nearest)))


def uq_map(estimator: UqEstimator, embeddings: npt.ArrayLike) -> FloatArray:
    """Per-pixel U_m for an (H, W, d) embedding volume."""
    e = np.asarray(embeddings, dtype=np.float64)
    if e.shape[-1] != estimator.bank.dim:
        raise DimensionMismatch(f"embeddings have dimension {e.shape[-1]}, bank has {estimator.bank.dim}")
    result: FloatArray = estimator.query(e.reshape(-1, e.shape[-1])).model_uncertainty.reshape(e.shape[:-1])
    return result


def total_uncertainty(data_uncertainty: npt.ArrayLike, model_uncertainty: npt.ArrayLike) -> FloatArray:
    """U_t = U_d + U_m."""
    result: FloatArray = np.asarray(data_uncertainty, dtype=np.float64) + np.asarray(
        model_uncertainty, dtype=np.float64
    )
    return result
