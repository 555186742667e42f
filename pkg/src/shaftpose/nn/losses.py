"""Loss primitives: per-anchor softmax cross-entropy and smooth L1."""

from __future__ import annotations

import numpy as np

from ..errors import NumericError


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax over the last axis, numerically stabilized."""
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, onehot: np.ndarray):
    """Per-row cross-entropy losses, unreduced so callers can rank them.

    Returns (losses, probs); the gradient of a row's loss with respect
    to its logits is probs - onehot.
    """
    if not np.isfinite(logits.sum(dtype=np.float64)):
        raise NumericError("non-finite logits in softmax_cross_entropy")
    z = logits - logits.max(axis=-1, keepdims=True)
    log_probs = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    losses = -(onehot * log_probs).sum(axis=-1)
    return losses, np.exp(log_probs)


def smooth_l1(x: np.ndarray) -> np.ndarray:
    """Elementwise smooth L1: 0.5 x^2 for |x| < 1, |x| - 0.5 otherwise."""
    ax = np.abs(x)
    return np.where(ax < 1.0, 0.5 * x * x, ax - 0.5)


def smooth_l1_grad(x: np.ndarray) -> np.ndarray:
    """Derivative of :func:`smooth_l1`: x inside the quadratic zone, sign(x) outside."""
    return np.clip(x, -1.0, 1.0)
