"""Training losses: binary cross-entropy on probabilities and
cross-entropy of logits against soft target distributions."""

from __future__ import annotations

import numpy as np

from .autograd import Tensor, log_softmax

CLAMP = 1e-7


def binary_cross_entropy(p: Tensor, targets: np.ndarray) -> Tensor:
    """Mean BCE over the batch; probabilities are clamped to
    [CLAMP, 1 - CLAMP] before the logs."""
    y = np.asarray(targets, dtype=p.dtype)
    if y.shape != p.shape:
        raise ValueError(f"target shape {y.shape} != prediction shape {p.shape}")
    if np.any((y < 0.0) | (y > 1.0)):
        raise ValueError("binary targets must lie in [0, 1]")
    pc = p.clip(CLAMP, 1.0 - CLAMP)
    losses = -(Tensor(y) * pc.log() + Tensor(1.0 - y) * (1.0 - pc).log())
    return losses.mean()


def soft_target_cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean over the batch of -sum(target * log_softmax(logits))."""
    y = np.asarray(targets, dtype=logits.dtype)
    if y.shape != logits.shape:
        raise ValueError(f"target shape {y.shape} != logit shape {logits.shape}")
    sums = y.sum(axis=-1)
    if not np.allclose(sums, 1.0, atol=1e-6):
        raise ValueError("each target distribution must sum to 1")
    per_sample = -(Tensor(y) * log_softmax(logits, axis=-1)).sum(axis=-1)
    return per_sample.mean()
