# -*- coding: utf-8 -*-
"""Plain-loop reference implementations used to cross-check the vectorised code."""
import math
from typing import List, Sequence, Tuple

import numpy as np


def expectation(p: Sequence[float], midpoints: Sequence[float]) -> float:
    total = 0.0
    for pk, mk in zip(p, midpoints):
        total += pk * mk
    return total


def variance(p: Sequence[float], midpoints: Sequence[float]) -> float:
    mean = expectation(p, midpoints)
    total = 0.0
    for pk, mk in zip(p, midpoints):
        total += pk * (mk - mean) ** 2
    return total


def or_loss(logits: Sequence[float], target: Sequence[float], floor: float = 1e-7) -> float:
    top = max(logits)
    exps = [math.exp(z - top) for z in logits]
    norm = sum(exps)
    p = [e / norm for e in exps]
    loss = 0.0
    for k, t in enumerate(target):
        below = sum(p[: k + 1])
        above = sum(p[k + 1 :])
        loss -= t * math.log(max(below, floor)) + (1 - t) * math.log(max(above, floor))
    return loss


def census(image: np.ndarray, window: int) -> np.ndarray:
    h, w = image.shape
    r = window // 2
    bits = np.zeros((h, w, window * window - 1), dtype=bool)
    for y in range(h):
        for x in range(w):
            b = 0
            for dy in range(-r, r + 1):
                for dx in range(-r, r + 1):
                    if dy == 0 and dx == 0:
                        continue
                    yy = min(max(y + dy, 0), h - 1)
                    xx = min(max(x + dx, 0), w - 1)
                    bits[y, x, b] = image[yy, xx] > image[y, x]
                    b += 1
    return bits


def hamming_costs(left_bits: np.ndarray, right_bits: np.ndarray, shifts: Sequence[int]) -> np.ndarray:
    h, w, n_bits = left_bits.shape
    cost = np.zeros((h, w, len(shifts)))
    for y in range(h):
        for x in range(w):
            for k, d in enumerate(shifts):
                src = x - d
                if 0 <= src < w:
                    cost[y, x, k] = sum(left_bits[y, x, b] != right_bits[y, src, b] for b in range(n_bits))
                else:
                    cost[y, x, k] = n_bits
    return cost


def rbf_full_sum(
    points: np.ndarray, labels: np.ndarray, query: np.ndarray, h: float
) -> Tuple[float, float, float]:
    """Nadaraya-Watson prediction, local variance and KDE over every bank point."""
    weights: List[float] = []
    for s in points:
        d2 = sum((a - b) ** 2 for a, b in zip(s, query))
        weights.append(math.exp(-d2 / (2 * h * h)))
    total = sum(weights)
    g = sum(w * t for w, t in zip(weights, labels)) / total
    s2 = sum(w * (t - g) ** 2 for w, t in zip(weights, labels)) / total
    d = len(query)
    density = total / (len(points) * h**d * (2 * math.pi) ** (d / 2))
    return g, s2, density


def sparsification(errors: Sequence[float], scores: Sequence[float]) -> Tuple[List[float], List[float]]:
    n = len(errors)
    step = max(1, n // 100)
    by_score = sorted(range(n), key=lambda i: (-scores[i], i))
    by_error = sorted(range(n), key=lambda i: (-errors[i], i))
    est: List[float] = []
    oracle: List[float] = []
    for i in range(100):
        removed = min(i * step, n - 1)
        kept_s = [errors[j] for j in by_score[removed:]]
        kept_e = [errors[j] for j in by_error[removed:]]
        est.append(sum(kept_s) / len(kept_s))
        oracle.append(sum(kept_e) / len(kept_e))
    return est, oracle


def trapezoid_gap(est: Sequence[float], oracle: Sequence[float]) -> float:
    area = 0.0
    for i in range(1, len(est)):
        gap_prev = est[i - 1] - oracle[i - 1]
        gap = est[i] - oracle[i]
        area += 0.5 * (gap_prev + gap) * 0.01
    return area
