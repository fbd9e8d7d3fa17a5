"""Batch normalization and the normalized-last-layer network.

A batch-norm layer carries no weight matrix: it standardizes each feature
over the batch (biased variance, epsilon inside the square root) and then
applies an elementwise scale and shift,

    xhat = (x - mean) / sqrt(var + eps),   out = scale * xhat + shift.

Because (x_i - mean)^2 can never exceed the summed squared deviations,
|xhat| < sqrt(B) holds for every entry whenever eps > 0, independent of
the incoming features.  That hard ceiling is what makes the scale
parameter of a final batch-norm layer controllable by weight decay, and
the bound checkers in this package monitor exactly these two quantities.

``BatchNormMlpObjective`` is the matching network: an affine+activation
stack whose last hidden width equals the class count, finished by one
batch-norm layer whose output are the logits.  Parameters are the hidden
weight matrices plus the scale and shift vectors.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..data import Dataset
from ..params import ParamVector, unpack_many
from .base import Objective
from .losses import cross_entropy
from .mlp import ACTIVATIONS, init_weights

__all__ = ["BatchNormLayer", "batchnorm_forward", "BatchNormMlpObjective"]


@dataclass
class BatchNormLayer:
    scale: np.ndarray
    shift: np.ndarray
    eps: float = 1e-5

    def __post_init__(self):
        self.scale = np.atleast_1d(np.asarray(self.scale, dtype=np.float64))
        self.shift = np.atleast_1d(np.asarray(self.shift, dtype=np.float64))
        if self.scale.shape != self.shift.shape or self.scale.ndim != 1:
            raise ValueError("scale and shift must be vectors of the same width")
        if not (self.eps > 0):
            raise ValueError("eps must be positive")


def _bn_stats(X: np.ndarray, eps: float):
    mu = X.mean(axis=-2, keepdims=True)
    centered = X - mu
    var = (centered * centered).mean(axis=-2, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    return centered * inv_std, inv_std


def batchnorm_forward(layer: BatchNormLayer, X) -> tuple[np.ndarray, np.ndarray]:
    """Normalize a batch and apply scale/shift.  X: (B, d), B >= 2.

    Returns (out, xhat).  A batch whose rows are all identical normalizes
    to xhat = 0, so the output is exactly the shift vector.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"expected a (B, d) batch, got shape {X.shape}")
    if X.shape[0] < 2:
        raise ValueError("batch statistics need at least 2 examples")
    if X.shape[1] != layer.scale.size:
        raise ValueError(f"feature width {X.shape[1]} != layer width {layer.scale.size}")
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite inputs rejected")
    xhat, _ = _bn_stats(X, layer.eps)
    return layer.scale * xhat + layer.shift, xhat


def _bn_backward(dout, xhat, inv_std, scale):
    """Gradient through standardize-scale-shift.

    dout carries any 1/B loss averaging.  Returns (dX, dscale, dshift)
    where dscale/dshift sum over the batch axis.
    """
    dscale = (dout * xhat).sum(axis=-2)
    dshift = dout.sum(axis=-2)
    dxhat = dout * scale
    dX = inv_std * (dxhat
                    - dxhat.mean(axis=-2, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-2, keepdims=True))
    return dX, dscale, dshift


class BatchNormMlpObjective(Objective):
    """Cross-entropy over a network whose last layer is batch norm.

    widths d_0..d_{L-1}; the affine stack has L-1 weight matrices, each
    followed by its activation, and d_{L-1} must equal the number of
    classes since the batch-norm output is the logit vector.  The loss of
    a batch depends on the whole batch through the normalization
    statistics, so per-example gradients are not defined here.
    """

    has_per_example = False

    def __init__(self, widths, activations, dataset: Dataset, eps: float = 1e-5):
        self.widths = tuple(int(w) for w in widths)
        self.activations = tuple(activations)
        if len(self.widths) < 2:
            raise ValueError("need at least input and feature widths")
        if len(self.activations) != len(self.widths) - 1:
            raise ValueError(
                f"{len(self.widths) - 1} affine layers need as many activations, "
                f"got {len(self.activations)}"
            )
        for name in self.activations:
            if name not in ACTIVATIONS:
                raise ValueError(f"unknown activation {name!r}")
        if not (eps > 0):
            raise ValueError("eps must be positive")
        if dataset.dim != self.widths[0]:
            raise ValueError(
                f"dataset width {dataset.dim} != network input width {self.widths[0]}"
            )
        if dataset.num_classes != self.widths[-1]:
            raise ValueError(
                f"batch-norm logits have width {self.widths[-1]}, dataset has "
                f"{dataset.num_classes} classes"
            )
        self.eps = float(eps)
        self.dataset = dataset
        d = self.widths[-1]
        self.affine_shapes = tuple(
            (self.widths[l + 1], self.widths[l]) for l in range(len(self.widths) - 1)
        )
        self.shapes = self.affine_shapes + ((d,), (d,))
        self.dim = sum(int(np.prod(s)) for s in self.shapes)
        self.num_examples = dataset.num_examples

    # -- stacked forward/backward ---------------------------------------

    def _gather(self, batch):
        if batch is None:
            return self.dataset.inputs, self.dataset.labels
        return self.dataset.inputs[batch], self.dataset.labels[batch]

    def _forward(self, thetas, X):
        blocks = unpack_many(self.shapes, thetas)
        Ws, scale, shift = blocks[:-2], blocks[-2], blocks[-1]
        x = X
        xs = [x]
        derivs = []
        for l, W in enumerate(Ws):
            z = np.matmul(x, np.swapaxes(W, -1, -2))
            fn, dfn = ACTIVATIONS[self.activations[l]]
            derivs.append(dfn(z))
            x = fn(z)
            xs.append(x)
        xhat, inv_std = _bn_stats(x, self.eps)
        logits = scale[:, None, :] * xhat + shift[:, None, :]
        return Ws, scale, xs, derivs, xhat, inv_std, logits

    def loss_many(self, thetas, batch=None):
        thetas = np.atleast_2d(np.asarray(thetas, dtype=np.float64))
        batch = self._check_bn_batch(batch)
        X, y = self._gather(batch)
        *_, logits = self._forward(thetas, X)
        values, _ = cross_entropy(logits, y)
        return values.mean(axis=-1)

    def loss_and_grad_many(self, thetas, batches=None):
        thetas = np.atleast_2d(np.asarray(thetas, dtype=np.float64))
        T = thetas.shape[0]
        if batches is None:
            self._check_bn_batch(None)
            X, y = self.dataset.inputs, self.dataset.labels
        else:
            batches = np.asarray(batches)
            if batches.ndim != 2 or batches.shape[0] != T:
                raise ValueError(f"batches must be (T={T}, m), got {batches.shape}")
            if batches.shape[1] < 2:
                raise ValueError("batch statistics need at least 2 examples")
            self._check_batch(batches.ravel())
            X = self.dataset.inputs[batches]
            y = self.dataset.labels[batches]
        Ws, scale, xs, derivs, xhat, inv_std, logits = self._forward(thetas, X)
        values, dlogits = cross_entropy(logits, y)
        B = values.shape[-1]
        dlogits = dlogits / B
        dh, dscale, dshift = _bn_backward(dlogits, xhat, inv_std, scale[:, None, :])
        delta = dh * derivs[-1]
        grads = [None] * len(Ws)
        for l in range(len(Ws) - 1, -1, -1):
            x_in = xs[l]
            if x_in.ndim == 2:
                x_in = np.broadcast_to(x_in, (T,) + x_in.shape)
            grads[l] = np.matmul(np.swapaxes(delta, -1, -2), x_in)
            if l > 0:
                delta = np.matmul(delta, Ws[l]) * derivs[l - 1]
        flat = np.concatenate(
            [g.reshape(T, -1) for g in grads] + [dscale, dshift], axis=1
        )
        return values.mean(axis=-1), flat

    def _check_bn_batch(self, batch):
        if batch is None:
            if self.num_examples < 2:
                raise ValueError("batch statistics need at least 2 examples")
            return None
        batch = self._check_batch(batch)
        if batch.size < 2:
            raise ValueError("batch statistics need at least 2 examples")
        return batch

    # -- single-vector interface ------------------------------------------

    def loss_and_grad(self, theta, batch=None):
        v = self._values(theta)
        if batch is not None:
            batch = self._check_bn_batch(batch)
            losses, grads = self.loss_and_grad_many(v[None, :], batch.reshape(1, -1))
        else:
            losses, grads = self.loss_and_grad_many(v[None, :], None)
        return float(losses[0]), grads[0]

    def loss(self, theta, batch=None):
        v = self._values(theta)
        return float(self.loss_many(v[None, :], self._check_bn_batch(batch))[0])

    def per_example_grads(self, theta, idx=None):
        raise ValueError(
            "per-example gradients are undefined with batch normalization: "
            "the normalization statistics couple the examples in a batch"
        )

    def scale_shift(self, theta) -> tuple[np.ndarray, np.ndarray]:
        """The batch-norm scale and shift blocks of a parameter vector."""
        blocks = ParamVector(self._values(theta), self.shapes).blocks()
        return blocks[-2], blocks[-1]

    def xhat_many(self, thetas, batch=None) -> np.ndarray:
        """Normalized features seen by the batch-norm layer, (T, B, d)."""
        thetas = np.atleast_2d(np.asarray(thetas, dtype=np.float64))
        batch = self._check_bn_batch(batch)
        X, _ = self._gather(batch)
        *_, xhat, _, _ = self._forward(thetas, X)
        return xhat

    def init_theta(self, rng, w_init: float = 1.0, scale_bound: float = 1.0):
        """Hidden weights as in the plain MLP; scale ~ U(-bound, bound) per
        coordinate; shift starts at zero."""
        hidden = init_weights(self.affine_shapes, rng, w_init)
        d = self.widths[-1]
        scale = rng.uniform(-scale_bound, scale_bound, size=d)
        shift = np.zeros(d)
        return ParamVector.from_blocks(list(hidden.blocks()) + [scale, shift])

    def descriptor(self):
        return {
            "kind": "bn_mlp",
            "widths": list(self.widths),
            "activations": list(self.activations),
            "eps": self.eps,
            "num_examples": self.num_examples,
            "num_classes": self.dataset.num_classes,
        }
