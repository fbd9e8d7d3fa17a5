"""Fully connected networks with hand-rolled forward and backward passes.

Layer l maps x_{l-1} to sigma_l(W_{l-1} x_{l-1}); there are no bias terms
and the last activation is the identity, so the logits are a linear image
of the final hidden features.  With relu or tanh activations the slopes
are at most 1 everywhere, which is what the containment analysis in the
theorem checkers leans on.

All internals run over a leading stack axis of parameter vectors: shapes
are (T, B, d) for activations and (T, d_out, d_in) for weights.  Single
vector calls are T=1 views of the same code, so the solo and swept paths
cannot drift apart.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..data import Dataset
from ..params import ParamVector, as_values, unpack_many
from .base import Objective
from .losses import cross_entropy

__all__ = ["MlpSpec", "ForwardTrace", "mlp_forward", "MlpObjective",
           "ACTIVATIONS", "init_weights"]


def _relu(z):
    return np.maximum(z, 0.0)


def _drelu(z):
    # exact zero subgradient at the kink
    return (z > 0.0).astype(np.float64)


def _tanh(z):
    return np.tanh(z)


def _dtanh(z):
    t = np.tanh(z)
    return 1.0 - t * t


def _identity(z):
    return z


def _didentity(z):
    return np.ones_like(z)


ACTIVATIONS = {
    "relu": (_relu, _drelu),
    "tanh": (_tanh, _dtanh),
    "identity": (_identity, _didentity),
}


@dataclass(frozen=True)
class MlpSpec:
    """widths d_0..d_L and one activation name per layer; the last is identity."""

    widths: tuple[int, ...]
    activations: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        object.__setattr__(self, "activations", tuple(self.activations))
        if len(self.widths) < 2:
            raise ValueError("need at least input and output widths")
        if any(w < 1 for w in self.widths):
            raise ValueError(f"widths must be positive, got {self.widths}")
        if len(self.activations) != len(self.widths) - 1:
            raise ValueError(
                f"{len(self.widths) - 1} layers need {len(self.widths) - 1} "
                f"activations, got {len(self.activations)}"
            )
        for name in self.activations:
            if name not in ACTIVATIONS:
                raise ValueError(f"unknown activation {name!r}")
        if self.activations[-1] != "identity":
            raise ValueError("the last activation must be identity")

    @property
    def depth(self) -> int:
        return len(self.widths) - 1

    @property
    def shapes(self) -> tuple[tuple[int, int], ...]:
        return tuple((self.widths[l + 1], self.widths[l]) for l in range(self.depth))

    @property
    def dim(self) -> int:
        return sum(o * i for o, i in self.shapes)


@dataclass
class ForwardTrace:
    """Per-layer tensors from a forward pass: x_0..x_L and z_1..z_L."""

    activations: list[np.ndarray]
    preactivations: list[np.ndarray]


def _forward_many(spec: MlpSpec, Ws, X):
    """X: (B, d0) shared or (T, B, d0) per-stack.  Returns xs, derivs.

    xs[l] is the activation of layer l (xs[0] = inputs), derivs[l-1] the
    activation slope at z_l for hidden layers only.
    """
    x = np.asarray(X, dtype=np.float64)
    xs = [x]
    derivs = []
    for l, W in enumerate(Ws):
        z = np.matmul(x, np.swapaxes(W, -1, -2))
        name = spec.activations[l]
        fn, dfn = ACTIVATIONS[name]
        x = fn(z)
        if l < spec.depth - 1:
            derivs.append(dfn(z))
        xs.append(x)
    return xs, derivs


def _backward_many(Ws, xs, derivs, dlogits):
    """Weight gradients from logit gradients; dlogits already carries any
    1/B averaging.  Returns a flat (T, dim) array."""
    T = dlogits.shape[0]
    delta = dlogits
    grads = [None] * len(Ws)
    for l in range(len(Ws) - 1, -1, -1):
        x_in = xs[l]
        if x_in.ndim == 2:  # shared inputs at the first layer
            x_in = np.broadcast_to(x_in, (T,) + x_in.shape)
        grads[l] = np.matmul(np.swapaxes(delta, -1, -2), x_in)
        if l > 0:
            delta = np.matmul(delta, Ws[l]) * derivs[l - 1]
    return np.concatenate([g.reshape(T, -1) for g in grads], axis=1)


def mlp_forward(spec: MlpSpec, theta, X) -> tuple[np.ndarray, ForwardTrace]:
    """Logits and full trace for a single parameter vector.

    X: (B, d0) or a single example (d0,).  A feature-width mismatch is a
    configuration error.
    """
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != spec.widths[0]:
        raise ValueError(
            f"inputs have width {X.shape[-1]}, network expects {spec.widths[0]}"
        )
    v = as_values(theta)
    if v.size != spec.dim:
        raise ValueError(f"expected {spec.dim} parameters, got {v.size}")
    values = ParamVector(v, spec.shapes)
    acts = [X]
    zs = []
    x = X
    for l, W in enumerate(values.blocks()):
        z = x @ W.T
        zs.append(z)
        x = ACTIVATIONS[spec.activations[l]][0](z)
        acts.append(x)
    logits = x
    if single:
        logits = logits[0]
        acts = [a[0] for a in acts]
        zs = [z[0] for z in zs]
    return logits, ForwardTrace(acts, zs)


def init_weights(shapes, rng: np.random.Generator, w_init: float = 1.0) -> ParamVector:
    """Gaussian matrices rescaled so layer l has operator norm u_l * w_init
    with u_l ~ U(0, 1).  Draw order per layer: entries, then the scale."""
    if w_init <= 0:
        raise ValueError("w_init must be positive")
    blocks = []
    for shape in shapes:
        A = rng.normal(size=shape)
        u = rng.uniform()
        s = np.linalg.norm(A, 2)
        blocks.append(A * (u * w_init / s) if s > 0 else A)
    return ParamVector.from_blocks(blocks)


class MlpObjective(Objective):
    """Mean cross-entropy of an MLP over a fixed classification dataset."""

    def __init__(self, spec: MlpSpec, dataset: Dataset):
        if dataset.dim != spec.widths[0]:
            raise ValueError(
                f"dataset width {dataset.dim} != network input width {spec.widths[0]}"
            )
        if dataset.num_classes != spec.widths[-1]:
            raise ValueError(
                f"dataset has {dataset.num_classes} classes, network outputs "
                f"{spec.widths[-1]}"
            )
        self.spec = spec
        self.dataset = dataset
        self.dim = spec.dim
        self.num_examples = dataset.num_examples
        self.shapes = spec.shapes

    # -- batch selection -------------------------------------------------

    def _gather(self, batch):
        if batch is None:
            return self.dataset.inputs, self.dataset.labels
        batch = self._check_batch(batch)
        return self.dataset.inputs[batch], self.dataset.labels[batch]

    # -- stacked core ------------------------------------------------------

    def loss_many(self, thetas, batch=None):
        thetas = np.atleast_2d(np.asarray(thetas, dtype=np.float64))
        X, y = self._gather(batch)
        Ws = unpack_many(self.shapes, thetas)
        xs, _ = _forward_many(self.spec, Ws, X)
        values, _ = cross_entropy(xs[-1], y)
        return values.mean(axis=-1)

    def loss_and_grad_many(self, thetas, batches=None):
        thetas = np.atleast_2d(np.asarray(thetas, dtype=np.float64))
        T = thetas.shape[0]
        if batches is None:
            X, y = self.dataset.inputs, self.dataset.labels
        else:
            batches = np.asarray(batches)
            if batches.ndim != 2 or batches.shape[0] != T:
                raise ValueError(f"batches must be (T={T}, m), got {batches.shape}")
            self._check_batch(batches.ravel())
            X = self.dataset.inputs[batches]          # (T, m, d0)
            y = self.dataset.labels[batches]          # (T, m)
        Ws = unpack_many(self.shapes, thetas)
        xs, derivs = _forward_many(self.spec, Ws, X)
        values, dlogits = cross_entropy(xs[-1], y)
        B = values.shape[-1]
        grads = _backward_many(Ws, xs, derivs, dlogits / B)
        return values.mean(axis=-1), grads

    # -- public single-vector interface ------------------------------------

    def loss_and_grad(self, theta, batch=None):
        v = self._values(theta)
        if batch is not None:
            batch = np.asarray(self._check_batch(batch)).reshape(1, -1)
            losses, grads = self.loss_and_grad_many(v[None, :], batch)
        else:
            losses, grads = self.loss_and_grad_many(v[None, :], None)
        return float(losses[0]), grads[0]

    def loss(self, theta, batch=None):
        v = self._values(theta)
        if batch is not None:
            batch = self._check_batch(batch)
            return float(self.loss_many(v[None, :], batch)[0])
        return float(self.loss_many(v[None, :])[0])

    def per_example_grads(self, theta, idx=None):
        v = self._values(theta)
        if idx is None:
            self._guard_per_example()
            X, y = self.dataset.inputs, self.dataset.labels
        else:
            idx = self._check_batch(idx)
            self._guard_per_example(idx.size)
            X, y = self.dataset.inputs[idx], self.dataset.labels[idx]
        Ws = unpack_many(self.shapes, v[None, :])
        xs, derivs = _forward_many(self.spec, Ws, X)
        _, dlogits = cross_entropy(xs[-1], y)
        delta = dlogits[0]                            # (N, d_L)
        grads = [None] * len(Ws)
        for l in range(len(Ws) - 1, -1, -1):
            x_in = xs[l][0] if xs[l].ndim == 3 else xs[l]
            grads[l] = delta[:, :, None] * x_in[:, None, :]
            if l > 0:
                delta = (delta @ Ws[l][0]) * derivs[l - 1][0]
        return np.concatenate([g.reshape(X.shape[0], -1) for g in grads], axis=1)

    def init_theta(self, rng, w_init: float = 1.0):
        return init_weights(self.shapes, rng, w_init)

    def descriptor(self):
        return {
            "kind": "mlp",
            "widths": list(self.spec.widths),
            "activations": list(self.spec.activations),
            "num_examples": self.num_examples,
            "num_classes": self.dataset.num_classes,
        }
