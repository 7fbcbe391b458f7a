"""Probability transforms and the binary cross-entropy loss.

BCE is evaluated in logit space (softplus form) so extreme probabilities
never hit a log-domain error.
"""

import numpy as np


def sigmoid(x):
    # |logit| capped at 36: float64 still resolves both sigma and 1-sigma,
    # keeping outputs strictly inside (0, 1)
    x = np.clip(np.asarray(x, dtype=np.float64), -36.0, 36.0)
    return 1.0 / (1.0 + np.exp(-x))


def softmax(logits, axis=-1):
    shifted = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(logits, axis=-1):
    shifted = logits - logits.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def _softplus(x):
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def bce_loss(logits, labels):
    """Binary cross-entropy of sigmoid(logits) against 0/1 labels.

    Returns (mean loss, gradient wrt logits). The gradient is
    (sigmoid(logit) - label) / N for the mean reduction.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if logits.shape != labels.shape:
        raise ValueError(f"logits shape {logits.shape} != labels shape {labels.shape}")
    # L = softplus(l) - y*l, elementwise
    losses = _softplus(logits) - labels * logits
    n = max(logits.size, 1)
    grad = (sigmoid(logits) - labels) / n
    return float(losses.mean()), grad


def bce_from_probability(p, label):
    """Scalar BCE from an already-sigmoided probability (convenience/oracle)."""
    p = float(p)
    eps = 1e-300
    return -(label * np.log(max(p, eps)) + (1.0 - label) * np.log(max(1.0 - p, eps)))
