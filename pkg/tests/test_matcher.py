from typing import List, Tuple

import numpy as np
import pytest

from src.cost_volume import CostVolume, StereoPair, build_cost_volume, normalize_costs
from src.datagen import NoiseRegion, SceneSpec, generate
from src.distribution import BinLayout, expectation, make_layout, variance
from src.errors import ConfigError, DimensionMismatch, DivergentLoss, EmptyDataset
from src.matcher import (
    LOG_COLUMNS,
    HeadParameters,
    TrainConfig,
    forward,
    head_loss_and_grad,
    infer,
    init_head,
    train,
    tsud_mask,
)


@pytest.fixture
def layout() -> BinLayout:
    return make_layout(0.0, 8.0, 8)


@pytest.fixture
def scenes(layout: BinLayout) -> Tuple[List[StereoPair], List[np.ndarray]]:
    """Three small noise-free scenes."""
    pairs = []
    labels = []
    for seed in range(3):
        scene = generate(SceneSpec(seed=seed, height=16, width=32, alpha=0.0, beta=8.0))
        pairs.append(scene.pair)
        labels.append(scene.disparity)
    return pairs, labels


# --- TrainConfig ---

@pytest.mark.parametrize(
    "kwargs",
    [
        {"epochs": 0},
        {"learning_rate": 0.0},
        {"tsud_keep_fraction": 0.0},
        {"tsud_keep_fraction": 1.2},
        {"epochs": 10, "tsud_start_epoch": 11},
        {"hidden": 0},
    ],
)
def test_train_config_rejects_invalid_values(kwargs: dict) -> None:
    """Out-of-range settings raise ConfigError."""
    with pytest.raises(ConfigError):
        TrainConfig(**kwargs)


def test_tsud_starts_at_half_the_epochs_by_default() -> None:
    """Without an explicit start the schedule begins halfway."""
    assert TrainConfig(epochs=200).start_epoch == 100
    assert TrainConfig(epochs=200, tsud_start_epoch=30).start_epoch == 30


# --- head ---

def test_init_head_is_seeded(layout: BinLayout) -> None:
    """Same seed gives identical parameters."""
    a = init_head(layout.count, hidden=16, seed=3)
    b = init_head(layout.count, hidden=16, seed=3)
    np.testing.assert_array_equal(a.w1, b.w1)
    np.testing.assert_array_equal(a.w2, b.w2)


def test_head_parameters_reject_inconsistent_shapes() -> None:
    """Layer shapes must chain."""
    with pytest.raises(DimensionMismatch):
        HeadParameters(w1=np.zeros((4, 8)), b1=np.zeros(4), w2=np.zeros((8, 5)), b2=np.zeros(8))


def test_forward_returns_valid_pmf_per_pixel(
    layout: BinLayout, scenes: Tuple[List[StereoPair], List[np.ndarray]]
) -> None:
    """Every pixel gets a PMF over the bins, with embeddings of the same shape."""
    pairs, _ = scenes
    volume, logits = forward(init_head(layout.count), build_cost_volume(pairs[0], layout))
    assert volume.mass.shape == (16, 32, 8)
    assert logits.shape == (16, 32, 8)
    np.testing.assert_allclose(volume.mass.sum(axis=-1), 1.0)


def test_initial_head_puts_the_mode_on_the_cheapest_bin(layout: BinLayout) -> None:
    """A cost vector with a single zero gives a PMF peaked at that bin before any training."""
    cost = np.ones((1, 1, layout.count))
    cost[0, 0, 5] = 0.0
    volume, _ = forward(init_head(layout.count), CostVolume(cost=cost, layout=layout, bits=24))
    assert int(np.argmax(volume.mass[0, 0])) == 5
    assert volume.mass[0, 0, 5] > 0.9


def test_initial_head_is_near_uniform_on_a_flat_cost(layout: BinLayout) -> None:
    """No bin stands out, so no bin gets a confident share of the mass."""
    cost = CostVolume(cost=np.full((1, 1, layout.count), 7.0), layout=layout, bits=24)
    volume, _ = forward(init_head(layout.count), cost)
    assert float(np.max(volume.mass)) < 0.3


def test_head_gradient_matches_finite_differences(
    layout: BinLayout, scenes: Tuple[List[StereoPair], List[np.ndarray]]
) -> None:
    """End-to-end head gradient on a 4x4 crop agrees with central differences."""
    pairs, labels = scenes
    cost = build_cost_volume(pairs[0], layout)
    inputs = normalize_costs(cost.cost[6:10, 12:16]).reshape(-1, layout.count)
    y = labels[0][6:10, 12:16].reshape(-1)
    head = init_head(layout.count, hidden=6, seed=1)

    _, grad = head_loss_and_grad(head, inputs, y, layout)
    eps = 1e-6
    worst = 0.0
    for name in ("w1", "b1", "w2", "b2"):
        param = getattr(head, name)
        analytic = getattr(grad, name)
        for idx in np.ndindex(param.shape):
            plus = param.copy()
            minus = param.copy()
            plus[idx] += eps
            minus[idx] -= eps
            f_plus, _ = head_loss_and_grad(
                HeadParameters(**{**head.__dict__, name: plus}), inputs, y, layout
            )
            f_minus, _ = head_loss_and_grad(
                HeadParameters(**{**head.__dict__, name: minus}), inputs, y, layout
            )
            numeric = (f_plus - f_minus) / (2 * eps)
            worst = max(worst, abs(analytic[idx] - numeric) / max(abs(numeric), 1e-3))
    assert worst <= 1e-3


# --- TSUD mask ---

def test_tsud_mask_keeps_the_least_uncertain_pixels() -> None:
    """keep 0.5 drops the two most uncertain of four valid pixels."""
    ud = np.array([0.4, 0.1, 0.9, 0.2, 5.0])
    valid = np.array([True, True, True, True, False])
    keep = tsud_mask(ud, valid, 0.5)
    np.testing.assert_array_equal(keep, [False, True, False, True, False])


def test_tsud_mask_with_full_keep_returns_all_valid() -> None:
    """keep 1.0 masks nothing."""
    valid = np.array([True, False, True])
    np.testing.assert_array_equal(tsud_mask(np.array([3.0, 2.0, 1.0]), valid, 1.0), valid)


def test_tsud_mask_breaks_ties_by_index() -> None:
    """Equal uncertainties keep the earlier pixels."""
    keep = tsud_mask(np.ones(4), np.ones(4, dtype=bool), 0.5)
    np.testing.assert_array_equal(keep, [True, True, False, False])


# --- training ---

def test_training_reduces_the_loss(
    layout: BinLayout, scenes: Tuple[List[StereoPair], List[np.ndarray]]
) -> None:
    """Final loss is below the first epoch's loss and the log has one row per epoch."""
    pairs, labels = scenes
    _, log = train(pairs, labels, layout, TrainConfig(epochs=40, learning_rate=0.05, seed=42))
    assert list(log.columns) == LOG_COLUMNS
    assert len(log) == 40
    assert log["loss"].iloc[-1] < log["loss"].iloc[0]
    assert (log["masked_fraction"] == 0.0).all()


def test_training_is_deterministic(
    layout: BinLayout, scenes: Tuple[List[StereoPair], List[np.ndarray]]
) -> None:
    """Same data and seed reproduce parameters and log exactly."""
    pairs, labels = scenes
    config = TrainConfig(epochs=5)
    head_a, log_a = train(pairs, labels, layout, config)
    head_b, log_b = train(pairs, labels, layout, config)
    np.testing.assert_array_equal(head_a.w1, head_b.w1)
    assert log_a.equals(log_b)


def test_tsud_with_full_keep_equals_plain_training(
    layout: BinLayout, scenes: Tuple[List[StereoPair], List[np.ndarray]]
) -> None:
    """Keeping every pixel reproduces the run without TSUD."""
    pairs, labels = scenes
    _, plain = train(pairs, labels, layout, TrainConfig(epochs=6))
    _, full = train(
        pairs, labels, layout, TrainConfig(epochs=6, tsud_enabled=True, tsud_keep_fraction=1.0, tsud_start_epoch=0)
    )
    assert plain.equals(full)


def test_tsud_masks_pixels_after_the_start_epoch(
    layout: BinLayout, scenes: Tuple[List[StereoPair], List[np.ndarray]]
) -> None:
    """Masking begins at the start epoch and drops about the configured share."""
    pairs, labels = scenes
    config = TrainConfig(epochs=6, tsud_enabled=True, tsud_keep_fraction=0.9)
    _, log = train(pairs, labels, layout, config)
    assert (log["masked_fraction"].iloc[:3] == 0.0).all()
    assert log["masked_fraction"].iloc[3:].between(0.09, 0.11).all()


def _jaccard(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.count_nonzero(a & b) / np.count_nonzero(a | b))


def test_tsud_drops_noisy_pixels_more_often_than_chance() -> None:
    """With 10% label noise the dropped 5% overlaps the noise more than a random 5% does."""
    layout = make_layout(0.0, 16.0, 16)
    region = NoiseRegion(top=8, left=24, height=8, width=26, std=4.0)
    generated = [
        generate(SceneSpec(seed=seed, height=32, width=64, texture=texture, noise_regions=(region,)))
        for seed, texture in ((11, "checker"), (12, "value_noise"), (13, "checker"))
    ]
    pairs = [s.pair for s in generated]
    labels = [s.disparity for s in generated]
    config = TrainConfig(epochs=30, tsud_enabled=True, tsud_keep_fraction=0.95)
    head, _ = train(pairs, labels, layout, config)

    ud = np.concatenate([infer(head, pair, layout).data_uncertainty.ravel() for pair in pairs])
    valid = np.isfinite(np.concatenate([y.ravel() for y in labels]))
    noisy = np.concatenate([s.noise_mask.ravel() for s in generated])
    dropped = valid & ~tsud_mask(ud, valid, config.tsud_keep_fraction)

    rng = np.random.default_rng(0)
    random_drop = np.zeros_like(valid)
    random_drop[rng.choice(np.flatnonzero(valid), size=int(np.count_nonzero(dropped)), replace=False)] = True
    assert _jaccard(dropped, noisy) > _jaccard(random_drop, noisy)


def test_train_rejects_empty_and_mismatched_inputs(layout: BinLayout) -> None:
    """No pairs, or a label map per pair missing, is an error."""
    with pytest.raises(EmptyDataset):
        train([], [], layout, TrainConfig(epochs=1))
    pair = StereoPair(np.zeros((8, 8)), np.zeros((8, 8)))
    with pytest.raises(DimensionMismatch):
        train([pair], [], layout, TrainConfig(epochs=1))
    with pytest.raises(EmptyDataset):
        train([pair], [np.full((8, 8), np.inf)], layout, TrainConfig(epochs=1))


def test_huge_learning_rate_diverges(
    layout: BinLayout, scenes: Tuple[List[StereoPair], List[np.ndarray]]
) -> None:
    """An absurd step size ends in DivergentLoss, not NaN parameters."""
    pairs, labels = scenes
    with pytest.raises(DivergentLoss):
        train(pairs, labels, layout, TrainConfig(epochs=50, learning_rate=1e300))


def test_infer_outputs_moments_of_the_pmf(
    layout: BinLayout, scenes: Tuple[List[StereoPair], List[np.ndarray]]
) -> None:
    """Disparity and data uncertainty are the mean and variance of each pixel's PMF."""
    pairs, _ = scenes
    result = infer(init_head(layout.count), pairs[1], layout)
    np.testing.assert_allclose(result.disparity, expectation(result.volume.mass, layout))
    np.testing.assert_allclose(result.data_uncertainty, variance(result.volume.mass, layout))
    assert result.embeddings.shape == (16, 32, 8)


def test_textureless_pairs_are_more_uncertain_than_textured_ones(
    layout: BinLayout, scenes: Tuple[List[StereoPair], List[np.ndarray]]
) -> None:
    """A constant image pair gets a higher mean U_d than a textured scene."""
    pairs, labels = scenes
    head, _ = train(pairs, labels, layout, TrainConfig(epochs=20))
    flat = np.full((16, 32), 100, dtype=np.uint8)
    flat_ud = infer(head, StereoPair(flat, flat.copy()), layout).data_uncertainty
    textured_ud = infer(head, pairs[0], layout).data_uncertainty[np.isfinite(labels[0])]
    assert float(np.mean(flat_ud)) > float(np.mean(textured_ud))
