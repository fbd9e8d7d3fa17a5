"""Cross-entropy pieces, stabilized and batched.

Two signs are in play.  ``label_log_prob`` is the log-likelihood of the
correct class, x_y - log(sum_j exp x_j), which is never positive and is
the quantity the analytic bounds apply to: |value| <= c + log d whenever
the logit spread max-min is at most c, and its gradient one_hot - softmax
has 2-norm at most sqrt(2).  ``cross_entropy`` is the negation, the thing
training minimizes.
"""

from __future__ import annotations

import numpy as np

__all__ = ["log_softmax", "softmax", "label_log_prob", "cross_entropy"]


def _check_logits(logits: np.ndarray) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim < 1 or logits.shape[-1] < 2:
        raise ValueError(f"logits must have at least two classes, got shape {logits.shape}")
    if not np.all(np.isfinite(logits)):
        raise ValueError("non-finite logits rejected")
    return logits


def log_softmax(logits: np.ndarray) -> np.ndarray:
    """log softmax along the last axis, max-subtracted for stability."""
    logits = _check_logits(logits)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    logits = _check_logits(logits)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _take_label(values: np.ndarray, labels: np.ndarray) -> np.ndarray:
    return np.take_along_axis(values, labels[..., None], axis=-1)[..., 0]


def label_log_prob(logits: np.ndarray, labels) -> tuple[np.ndarray, np.ndarray]:
    """Log-likelihood of the labelled class and its gradient in the logits.

    logits: (..., d); labels: (...) integer class indices broadcastable
    against the leading axes.  Returns (values, grads) with values shaped
    like labels and grads shaped like logits.  The gradient is
    one_hot(label) - softmax(logits).
    """
    logits = _check_logits(logits)
    labels = np.asarray(labels)
    if not np.issubdtype(labels.dtype, np.integer):
        raise ValueError("labels must be integers")
    d = logits.shape[-1]
    if labels.min() < 0 or labels.max() >= d:
        raise ValueError(f"labels must lie in [0, {d})")
    labels = np.broadcast_to(labels, logits.shape[:-1])
    lsm = log_softmax(logits)
    values = _take_label(lsm, labels)
    grads = -np.exp(lsm)
    onehot_rows = np.arange(d).reshape((1,) * labels.ndim + (d,))
    grads = grads + (labels[..., None] == onehot_rows)
    return values, grads


def cross_entropy(logits: np.ndarray, labels) -> tuple[np.ndarray, np.ndarray]:
    """Training loss: negated label log-likelihood, with gradient."""
    values, grads = label_log_prob(logits, labels)
    return -values, -grads
