# -*- coding: utf-8 -*-
"""
Ordinal-regression supervision on the disparity CDF.

Each bin threshold t_{k+1} is a binary question "is y <= t_{k+1}?"; the loss
is the binary cross-entropy of those answers against the CDF of
softmax(logits). The gradient is derived by hand through the cumulative sum
and the softmax so the matcher can train with plain numpy.
"""
from typing import List, Optional, Tuple

import numpy as np
import numpy.typing as npt

from src.distribution import BinLayout, softmax
from src.errors import DimensionMismatch, EmptyMask, NonFiniteLabel

__all__: List[str] = [
    "encode_target",
    "or_loss",
    "or_loss_grad",
    "image_loss",
    "image_loss_and_grad",
]

FloatArray = npt.NDArray[np.float64]
BoolArray = npt.NDArray[np.bool_]

# Lower bound applied to the argument of every logarithm in the loss.
LOG_FLOOR = 1e-7


def encode_target(y: npt.ArrayLike, layout: BinLayout) -> FloatArray:
    """
    indicators[k] = 1 iff y <= t_{k+1} (the upper edge of bin k).

    Labels outside [alpha, beta] are clamped into the range first, so a label
    at or below alpha yields all ones and a label at beta yields [0, ..., 0, 1].
    """
    labels = np.asarray(y, dtype=np.float64)
    if not np.all(np.isfinite(labels)):
        raise NonFiniteLabel("ordinal targets need finite disparity labels")
    clamped = np.clip(labels, layout.alpha, layout.beta)
    result: FloatArray = (clamped[..., None] <= layout.edges[1:]).astype(np.float64)
    return result


def _check_shapes(logits: FloatArray, target: FloatArray) -> None:
    if logits.shape != target.shape:
        raise DimensionMismatch(f"logits {logits.shape} and target {target.shape} differ")


def _cdf_and_survival(mass: FloatArray) -> Tuple[FloatArray, FloatArray]:
    """F_k = P(Y <= t_{k+1}) and its complement summed from the tail, S_{K-1} = 0."""
    upper = np.cumsum(mass, axis=-1)
    tail = np.cumsum(mass[..., ::-1], axis=-1)[..., ::-1]
    survival = np.concatenate([tail[..., 1:], np.zeros_like(tail[..., :1])], axis=-1)
    return upper, survival


def or_loss(logits: npt.ArrayLike, target: npt.ArrayLike) -> FloatArray:
    """
    -sum_k [t_k log F_k + (1 - t_k) log(1 - F_k)] per pixel, in nats.

    1 - F_k is taken as the tail sum S_k of the PMF rather than computed by
    subtraction. F_k and S_k are each floored at LOG_FLOOR before the log;
    F_k itself is never clipped to [LOG_FLOOR, 1 - LOG_FLOOR], so a saturated
    bin costs exactly zero instead of a small constant.
    """
    z = np.asarray(logits, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    _check_shapes(z, t)
    upper, survival = _cdf_and_survival(softmax(z))
    log_f = np.log(np.maximum(upper, LOG_FLOOR))
    log_s = np.log(np.maximum(survival, LOG_FLOOR))
    result: FloatArray = -np.sum(t * log_f + (1.0 - t) * log_s, axis=-1)
    return result


def or_loss_grad(logits: npt.ArrayLike, target: npt.ArrayLike) -> FloatArray:
    """Analytic d(or_loss)/d(logits), same shape as ``logits``."""
    z = np.asarray(logits, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    _check_shapes(z, t)
    mass = softmax(z)
    upper, survival = _cdf_and_survival(mass)

    # Floored terms are constant, so they contribute no gradient.
    grad_f = np.where(upper > LOG_FLOOR, -t / np.maximum(upper, LOG_FLOOR), 0.0)
    grad_s = np.where(survival > LOG_FLOOR, -(1.0 - t) / np.maximum(survival, LOG_FLOOR), 0.0)

    # p_j feeds F_k for k >= j and S_k for k < j.
    from_f = np.cumsum(grad_f[..., ::-1], axis=-1)[..., ::-1]
    from_s = np.cumsum(grad_s, axis=-1) - grad_s
    grad_p = from_f + from_s

    inner = np.sum(mass * grad_p, axis=-1, keepdims=True)
    result: FloatArray = mass * (grad_p - inner)
    return result


def _valid_pixels(
    logits: FloatArray, labels: FloatArray, mask: Optional[npt.ArrayLike]
) -> BoolArray:
    if logits.shape[:-1] != labels.shape:
        raise DimensionMismatch(
            f"logit volume {logits.shape} does not match label map {labels.shape}"
        )
    valid: BoolArray = np.isfinite(labels)
    if mask is not None:
        m = np.asarray(mask, dtype=bool)
        if m.shape != labels.shape:
            raise DimensionMismatch(f"mask {m.shape} does not match label map {labels.shape}")
        valid = valid & m
    if not np.any(valid):
        raise EmptyMask("no valid pixels left for the loss")
    return valid


def image_loss(
    logits: npt.ArrayLike,
    labels: npt.ArrayLike,
    layout: BinLayout,
    mask: Optional[npt.ArrayLike] = None,
) -> float:
    """Mean OR loss over pixels that are inside ``mask`` and have a finite label."""
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    valid = _valid_pixels(z, y, mask)
    target = encode_target(y[valid], layout)
    return float(np.mean(or_loss(z[valid], target)))


def image_loss_and_grad(
    logits: npt.ArrayLike,
    labels: npt.ArrayLike,
    layout: BinLayout,
    mask: Optional[npt.ArrayLike] = None,
) -> Tuple[float, FloatArray]:
    """Mean OR loss and its gradient w.r.t. every logit (zero at excluded pixels)."""
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    valid = _valid_pixels(z, y, mask)
    target = encode_target(y[valid], layout)
    selected = z[valid]
    n = selected.shape[0]
    grad = np.zeros_like(z)
    grad[valid] = or_loss_grad(selected, target) / n
    return float(np.mean(or_loss(selected, target))), grad
