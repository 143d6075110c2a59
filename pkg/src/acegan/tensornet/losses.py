"""Batch-mean losses returning ``(value, gradient w.r.t. the prediction)``."""
from __future__ import annotations

import numpy as np

PROB_FLOOR = 1e-12


def mse(pred: np.ndarray, target) -> tuple[float, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    diff = pred - np.broadcast_to(target, pred.shape)
    n = max(diff.size, 1)
    return float(np.sum(diff * diff) / n), 2.0 * diff / n


def cross_entropy(probs: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """Mean negative log-probability of ``labels``; probabilities floored at 1e-12."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n = probs.shape[0]
    rows = np.arange(n)
    p = probs[rows, labels]
    clipped = np.maximum(p, PROB_FLOOR)
    loss = float(-np.sum(np.log(clipped)) / max(n, 1))
    grad = np.zeros_like(probs)
    grad[rows, labels] = np.where(p > PROB_FLOOR, -1.0 / (clipped * max(n, 1)), 0.0)
    return loss, grad
