"""Objective interface shared by every trainable loss in the package.

An objective is a finite-sum loss L_S(theta) = (1/N) sum_i l(theta, x_i)
over flat float64 parameter vectors.  ``batch`` arguments are integer
index arrays into the example set; None means the full set.  The *_many
variants evaluate a stack of parameter vectors at once; subclasses with
vectorizable internals override them, the defaults just loop.
"""

from __future__ import annotations

import numpy as np

from ..params import ParamVector, as_values

__all__ = ["Objective", "RegularizedObjective", "PER_EXAMPLE_CAP"]

# Exact per-example gradient computation refuses datasets larger than this;
# callers must fall back to the subsampled estimator.
PER_EXAMPLE_CAP = 10_000


class Objective:
    dim: int = 0
    num_examples: int = 0
    shapes: tuple = ()
    # False where single-example gradients do not exist (batch statistics)
    has_per_example: bool = True

    # -- core interface ------------------------------------------------

    def loss_and_grad(self, theta, batch=None) -> tuple[float, np.ndarray]:
        raise NotImplementedError

    def loss(self, theta, batch=None) -> float:
        return self.loss_and_grad(theta, batch)[0]

    def per_example_grads(self, theta, idx=None) -> np.ndarray:
        """Gradients of single-example losses at theta, shape (len(idx), dim);
        idx=None means all N examples."""
        raise NotImplementedError

    def init_theta(self, rng: np.random.Generator) -> ParamVector:
        raise NotImplementedError

    def descriptor(self) -> dict:
        """Plain-data summary sufficient to rebuild the objective."""
        raise NotImplementedError

    # -- stacked evaluation over a leading theta axis --------------------

    def loss_many(self, thetas: np.ndarray, batch=None) -> np.ndarray:
        thetas = np.atleast_2d(np.asarray(thetas, dtype=np.float64))
        return np.array([self.loss(t, batch) for t in thetas])

    def loss_and_grad_many(self, thetas: np.ndarray, batches=None):
        """Evaluate T parameter vectors, optionally each on its own batch.

        batches: None (full set for all) or an integer array (T, m) whose
        row t is the batch for thetas[t].  Returns losses (T,) and grads
        (T, dim).
        """
        thetas = np.atleast_2d(np.asarray(thetas, dtype=np.float64))
        losses = np.empty(thetas.shape[0])
        grads = np.empty_like(thetas)
        for t, th in enumerate(thetas):
            b = None if batches is None else batches[t]
            losses[t], grads[t] = self.loss_and_grad(th, b)
        return losses, grads

    # -- helpers ---------------------------------------------------------

    def _values(self, theta) -> np.ndarray:
        v = as_values(theta)
        if v.size != self.dim:
            raise ValueError(f"expected {self.dim} parameters, got {v.size}")
        return v

    def _check_batch(self, batch):
        if batch is None:
            return None
        batch = np.asarray(batch)
        if not np.issubdtype(batch.dtype, np.integer):
            raise ValueError("batch must be an integer index array")
        if batch.size == 0:
            raise ValueError("batch is empty")
        if batch.min() < 0 or batch.max() >= self.num_examples:
            raise ValueError(f"batch indices must lie in [0, {self.num_examples})")
        return batch

    def _guard_per_example(self, count=None):
        count = self.num_examples if count is None else int(count)
        if count > PER_EXAMPLE_CAP:
            raise ValueError(
                f"per-example gradients refused for {count} examples > "
                f"cap {PER_EXAMPLE_CAP}; use the subsampled estimator"
            )


class RegularizedObjective(Objective):
    """base loss plus (gamma/2)||theta||^2.

    gamma=0 is an exact passthrough: values and gradients are returned
    bit-identical to the base objective's.
    """

    def __init__(self, base: Objective, gamma: float):
        if gamma < 0:
            raise ValueError("gamma must be >= 0")
        self.base = base
        self.gamma = float(gamma)
        self.dim = base.dim
        self.num_examples = base.num_examples
        self.shapes = base.shapes

    def loss_and_grad(self, theta, batch=None):
        loss, grad = self.base.loss_and_grad(theta, batch)
        if self.gamma == 0.0:
            return loss, grad
        v = self._values(theta)
        return loss + 0.5 * self.gamma * float(v @ v), grad + self.gamma * v

    def loss_many(self, thetas, batch=None):
        losses = self.base.loss_many(thetas, batch)
        if self.gamma == 0.0:
            return losses
        thetas = np.atleast_2d(np.asarray(thetas, dtype=np.float64))
        return losses + 0.5 * self.gamma * np.einsum("td,td->t", thetas, thetas)

    def loss_and_grad_many(self, thetas, batches=None):
        losses, grads = self.base.loss_and_grad_many(thetas, batches)
        if self.gamma == 0.0:
            return losses, grads
        thetas = np.atleast_2d(np.asarray(thetas, dtype=np.float64))
        return (losses + 0.5 * self.gamma * np.einsum("td,td->t", thetas, thetas),
                grads + self.gamma * thetas)

    def per_example_grads(self, theta, idx=None):
        grads = self.base.per_example_grads(theta, idx)
        if self.gamma == 0.0:
            return grads
        return grads + self.gamma * self._values(theta)

    def init_theta(self, rng, **kw):
        return self.base.init_theta(rng, **kw)

    def descriptor(self):
        return {"kind": "regularized", "gamma": self.gamma, "base": self.base.descriptor()}
