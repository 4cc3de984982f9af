# -*- coding: utf-8 -*-
"""
A per-pixel ordinal-regression head on top of census matching costs.

The head maps a normalised cost vector (K values) through two affine layers
with a tanh between them to K logits; softmax of the logits is the disparity
PMF and the logits themselves are the embeddings the kernel estimator is
fitted on. Training is full-batch gradient descent on the mean OR loss, with
optional TSUD masking of the most uncertain pixels in later epochs.
"""
import logging
import math
from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import numpy.typing as npt
import pandas as pd

from src.cost_volume import CostVolume, StereoPair, build_cost_volume, normalize_costs
from src.distribution import BinLayout, ProbabilityVolume, expectation, softmax, variance
from src.errors import ConfigError, DimensionMismatch, DivergentLoss, EmptyDataset
from src.ordinal import image_loss_and_grad

__all__: List[str] = [
    "HeadParameters",
    "TrainConfig",
    "TrainingLog",
    "Inference",
    "init_head",
    "forward",
    "head_loss_and_grad",
    "tsud_mask",
    "train",
    "infer",
]

logger = logging.getLogger(__name__)

FloatArray = npt.NDArray[np.float64]
BoolArray = npt.NDArray[np.bool_]
TrainingLog = pd.DataFrame

LOG_COLUMNS = ["epoch", "loss", "epe", "mean_ud", "masked_fraction"]

# Training stops with DivergentLoss past either bound.
LOGIT_LIMIT = 1e4
LOSS_GROWTH_LIMIT = 4.0


@dataclass(frozen=True, eq=False)
class HeadParameters:
    """logits = w2 @ tanh(w1 @ x + b1) + b2."""

    w1: FloatArray
    b1: FloatArray
    w2: FloatArray
    b2: FloatArray

    def __post_init__(self) -> None:
        hidden, count = self.w1.shape
        if self.b1.shape != (hidden,) or self.w2.shape != (count, hidden) or self.b2.shape != (count,):
            raise DimensionMismatch(
                f"inconsistent head shapes w1{self.w1.shape} b1{self.b1.shape} "
                f"w2{self.w2.shape} b2{self.b2.shape}"
            )

    @property
    def count(self) -> int:
        return int(self.w1.shape[1])

    @property
    def hidden(self) -> int:
        return int(self.w1.shape[0])

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in (self.w1, self.b1, self.w2, self.b2))

    def step(self, grad: "HeadParameters", learning_rate: float) -> "HeadParameters":
        return HeadParameters(
            w1=self.w1 - learning_rate * grad.w1,
            b1=self.b1 - learning_rate * grad.b1,
            w2=self.w2 - learning_rate * grad.w2,
            b2=self.b2 - learning_rate * grad.b2,
        )


@dataclass
class TrainConfig:
    """Explicit configuration for head training and the TSUD schedule."""

    epochs: int = 200
    learning_rate: float = 0.05
    seed: int = 42
    tsud_enabled: bool = False
    tsud_keep_fraction: float = 0.95
    tsud_start_epoch: Optional[int] = None
    hidden: int = 32
    window: int = 5

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ConfigError(f"train.epochs must be >= 1, got {self.epochs}")
        if not self.learning_rate > 0:
            raise ConfigError(f"train.lr must be positive, got {self.learning_rate}")
        if not 0.0 < self.tsud_keep_fraction <= 1.0:
            raise ConfigError(f"tsud.keep must lie in (0, 1], got {self.tsud_keep_fraction}")
        if self.tsud_start_epoch is not None and not 0 <= self.tsud_start_epoch <= self.epochs:
            raise ConfigError(
                f"tsud.start must lie in [0, {self.epochs}], got {self.tsud_start_epoch}"
            )
        if self.hidden < 1:
            raise ConfigError(f"matcher.hidden must be >= 1, got {self.hidden}")

    @property
    def start_epoch(self) -> int:
        """TSUD starts after half of the epochs unless set explicitly."""
        if self.tsud_start_epoch is None:
            return self.epochs // 2
        return self.tsud_start_epoch


class Inference(NamedTuple):
    disparity: FloatArray
    data_uncertainty: FloatArray
    embeddings: FloatArray
    volume: ProbabilityVolume


def init_head(
    count: int,
    hidden: int = 32,
    seed: int = 42,
    noise: float = 0.1,
    slope: float = 2.0,
    threshold: float = 1.5,
    gain: float = 4.0,
) -> HeadParameters:
    """
    Seeded matched-filter initialisation: Gaussian noise on every weight, and
    on the leading min(hidden, count) units hidden_k = tanh(slope (x_k -
    threshold)) feeding logit_k with weight ``gain``.

    A bin whose normalised negated cost stands more than ``threshold``
    deviations above the rest starts as a sharp PMF mode; a flat cost vector
    starts close to uniform.
    """
    rng = np.random.default_rng(seed)
    n = min(hidden, count)
    w1 = noise * rng.standard_normal((hidden, count))
    w2 = noise * rng.standard_normal((count, hidden))
    b1 = np.zeros(hidden)
    w1[:n, :n] += slope * np.eye(n)
    b1[:n] = -slope * threshold
    w2[:n, :n] += gain * np.eye(n)
    return HeadParameters(w1=w1, b1=b1, w2=w2, b2=np.zeros(count))


def _head_forward(head: HeadParameters, inputs: FloatArray) -> Tuple[FloatArray, FloatArray]:
    """(N, K) inputs -> (N, K) logits, plus the hidden activations for backprop."""
    if inputs.shape[-1] != head.count:
        raise DimensionMismatch(f"head expects {head.count} inputs, got {inputs.shape[-1]}")
    hidden = np.tanh(inputs @ head.w1.T + head.b1)
    logits = hidden @ head.w2.T + head.b2
    return logits, hidden


def _head_backward(
    head: HeadParameters, inputs: FloatArray, hidden: FloatArray, grad_logits: FloatArray
) -> HeadParameters:
    grad_w2 = grad_logits.T @ hidden
    grad_b2 = np.sum(grad_logits, axis=0)
    grad_hidden = grad_logits @ head.w2
    grad_pre = grad_hidden * (1.0 - hidden * hidden)
    grad_w1 = grad_pre.T @ inputs
    grad_b1 = np.sum(grad_pre, axis=0)
    return HeadParameters(w1=grad_w1, b1=grad_b1, w2=grad_w2, b2=grad_b2)


def forward(head: HeadParameters, cost: CostVolume) -> Tuple[ProbabilityVolume, FloatArray]:
    """Per-pixel PMF and the logits (embeddings) for a cost volume."""
    if cost.disparities != head.count:
        raise DimensionMismatch(f"head has {head.count} bins, cost volume {cost.disparities}")
    inputs = normalize_costs(cost.cost).reshape(-1, cost.disparities)
    logits, _ = _head_forward(head, inputs)
    logits = logits.reshape(cost.cost.shape)
    return ProbabilityVolume(mass=softmax(logits), layout=cost.layout), logits


def head_loss_and_grad(
    head: HeadParameters,
    inputs: FloatArray,
    labels: FloatArray,
    layout: BinLayout,
    mask: Optional[BoolArray] = None,
) -> Tuple[float, HeadParameters]:
    """Mean OR loss of the head on (N, K) inputs and its gradient w.r.t. every parameter."""
    logits, hidden = _head_forward(head, inputs)
    loss, grad_logits = image_loss_and_grad(logits, labels, layout, mask)
    return loss, _head_backward(head, inputs, hidden, grad_logits)


def tsud_mask(uncertainty: FloatArray, valid: BoolArray, keep_fraction: float) -> BoolArray:
    """
    Keeps the ``keep_fraction`` share of valid pixels with the smallest data
    uncertainty. Ties are broken by pixel index.
    """
    candidates = np.flatnonzero(valid)
    n_keep = int(math.ceil(keep_fraction * candidates.size - 1e-9))
    if n_keep >= candidates.size:
        return valid.copy()
    order = np.argsort(uncertainty[candidates], kind="stable")
    keep = np.zeros_like(valid)
    keep[candidates[order[:n_keep]]] = True
    return keep


def _stack_training_data(
    pairs: Sequence[StereoPair], labels: Sequence[FloatArray], layout: BinLayout, window: int
) -> Tuple[FloatArray, FloatArray]:
    inputs = []
    targets = []
    for pair, label in zip(pairs, labels):
        y = np.asarray(label, dtype=np.float64)
        if y.shape != pair.shape:
            raise DimensionMismatch(f"labels {y.shape} do not match pair {pair.id!r} {pair.shape}")
        cost = build_cost_volume(pair, layout, window)
        inputs.append(normalize_costs(cost.cost).reshape(-1, layout.count))
        targets.append(y.reshape(-1))
    return np.concatenate(inputs), np.concatenate(targets)


def train(
    pairs: Sequence[StereoPair],
    labels: Sequence[FloatArray],
    layout: BinLayout,
    config: TrainConfig,
) -> Tuple[HeadParameters, TrainingLog]:
    """
    Full-batch gradient descent on the mean OR loss over every valid pixel.

    With TSUD enabled, from ``config.start_epoch`` on the mask is recomputed
    every epoch from the current PMF variance. The log row of an epoch
    describes the parameters before that epoch's update.
    """
    if len(pairs) == 0:
        raise EmptyDataset("training needs at least one stereo pair")
    if len(labels) != len(pairs):
        raise DimensionMismatch(f"{len(pairs)} pairs but {len(labels)} label maps")

    inputs, y = _stack_training_data(pairs, labels, layout, config.window)
    valid = np.isfinite(y)
    if not np.any(valid):
        raise EmptyDataset("no pixel of the training set has a valid label")
    n_valid = int(np.count_nonzero(valid))
    y_valid = y[valid]

    head = init_head(layout.count, config.hidden, config.seed)
    rows = []
    first_loss = math.inf
    for epoch in range(config.epochs):
        logits, hidden = _head_forward(head, inputs)
        peak = float(np.max(np.abs(logits)))
        if not peak <= LOGIT_LIMIT:
            raise DivergentLoss(
                f"logits reached {peak:.3g} at epoch {epoch} (lr={config.learning_rate}); lower the learning rate"
            )
        mass = softmax(logits)
        estimate = expectation(mass, layout)
        ud = variance(mass, layout)

        active = valid
        if config.tsud_enabled and epoch >= config.start_epoch:
            active = tsud_mask(ud, valid, config.tsud_keep_fraction)

        loss, grad_logits = image_loss_and_grad(logits, y, layout, active)
        if not math.isfinite(loss):
            raise DivergentLoss(
                f"loss became {loss} at epoch {epoch} (lr={config.learning_rate}); lower the learning rate"
            )
        if epoch == 0:
            first_loss = loss
        elif loss > LOSS_GROWTH_LIMIT * max(first_loss, 1.0):
            raise DivergentLoss(
                f"loss grew from {first_loss:.4g} to {loss:.4g} by epoch {epoch} "
                f"(lr={config.learning_rate}); lower the learning rate"
            )
        masked_fraction = 1.0 - np.count_nonzero(active) / n_valid
        rows.append(
            {
                "epoch": epoch,
                "loss": loss,
                "epe": float(np.mean(np.abs(estimate[valid] - y_valid))),
                "mean_ud": float(np.mean(ud[valid])),
                "masked_fraction": masked_fraction,
            }
        )
        if masked_fraction > 0:
            logger.debug("epoch %d: TSUD masked %.2f%% of pixels", epoch, 100 * masked_fraction)

        head = head.step(_head_backward(head, inputs, hidden, grad_logits), config.learning_rate)
        if not head.is_finite():
            raise DivergentLoss(f"parameters became non-finite at epoch {epoch}")

    log = pd.DataFrame(rows, columns=LOG_COLUMNS)
    logger.info(
        "trained %d epochs on %d pixels: loss %.4f -> %.4f, epe %.3f",
        config.epochs,
        n_valid,
        log["loss"].iloc[0],
        log["loss"].iloc[-1],
        log["epe"].iloc[-1],
    )
    return head, log


def infer(head: HeadParameters, pair: StereoPair, layout: BinLayout, window: int = 5) -> Inference:
    """Disparity (PMF mean), data uncertainty (PMF variance) and embeddings for one pair."""
    volume, logits = forward(head, build_cost_volume(pair, layout, window))
    return Inference(
        disparity=expectation(volume.mass, layout),
        data_uncertainty=variance(volume.mass, layout),
        embeddings=logits,
        volume=volume,
    )
