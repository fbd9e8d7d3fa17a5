"""Closed-form test objectives.

These have exact gradients and Hessians, so they anchor the finite
difference and eigenvalue machinery, and their update maps are fully
deterministic (a single formal example, no minibatch noise).
"""

from __future__ import annotations

import numpy as np

from ..params import ParamVector
from .base import Objective

__all__ = ["sin_product_eval", "SinProduct", "Quadratic"]


def sin_product_eval(theta, amplitude: float = 100.0):
    """Value, gradient and Hessian of f(t1, t2) = amplitude * sin t1 * sin t2.

    theta: (..., 2).  Returns value (...,), grad (..., 2), hess (..., 2, 2).
    The smoothness constant is the amplitude: at every minimum the Hessian
    is amplitude * I, so plain gradient descent is stable only for
    eta < 2 / amplitude.
    """
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape[-1] != 2:
        raise ValueError(f"theta must have two coordinates, got shape {theta.shape}")
    s1, s2 = np.sin(theta[..., 0]), np.sin(theta[..., 1])
    c1, c2 = np.cos(theta[..., 0]), np.cos(theta[..., 1])
    value = amplitude * s1 * s2
    grad = amplitude * np.stack([c1 * s2, s1 * c2], axis=-1)
    hess = amplitude * np.stack([
        np.stack([-s1 * s2, c1 * c2], axis=-1),
        np.stack([c1 * c2, -s1 * s2], axis=-1),
    ], axis=-2)
    return value, grad, hess


class SinProduct(Objective):
    """Two-parameter sine-product surface as a one-example objective."""

    def __init__(self, amplitude: float = 100.0, init_box=(0.0, np.pi)):
        self.amplitude = float(amplitude)
        self.init_box = (float(init_box[0]), float(init_box[1]))
        self.dim = 2
        self.num_examples = 1
        self.shapes = ((2,),)

    def loss_and_grad(self, theta, batch=None):
        self._check_batch(batch)
        v = self._values(theta)
        value, grad, _ = sin_product_eval(v, self.amplitude)
        return float(value), grad

    def loss_many(self, thetas, batch=None):
        self._check_batch(batch)
        thetas = np.atleast_2d(np.asarray(thetas, dtype=np.float64))
        return sin_product_eval(thetas, self.amplitude)[0]

    def loss_and_grad_many(self, thetas, batches=None):
        thetas = np.atleast_2d(np.asarray(thetas, dtype=np.float64))
        value, grad, _ = sin_product_eval(thetas, self.amplitude)
        return value, grad

    def hessian(self, theta) -> np.ndarray:
        return sin_product_eval(self._values(theta), self.amplitude)[2]

    def per_example_grads(self, theta, idx=None):
        g = self.loss_and_grad(theta)[1][None, :]
        if idx is None:
            return g
        return np.repeat(g, len(np.atleast_1d(idx)), axis=0)

    def init_theta(self, rng, **kw):
        lo, hi = self.init_box
        return ParamVector(rng.uniform(lo, hi, size=2), self.shapes)

    def descriptor(self):
        return {"kind": "sin_product", "amplitude": self.amplitude,
                "init_box": list(self.init_box)}


class Quadratic(Objective):
    """f(theta) = 0.5 * sum_i curvature_i * theta_i^2, exact dynamics."""

    def __init__(self, curvatures):
        c = np.atleast_1d(np.asarray(curvatures, dtype=np.float64))
        if c.ndim != 1 or c.size == 0:
            raise ValueError("curvatures must be a non-empty vector")
        self.curvatures = c
        self.dim = c.size
        self.num_examples = 1
        self.shapes = ((c.size,),)

    def loss_and_grad(self, theta, batch=None):
        self._check_batch(batch)
        v = self._values(theta)
        return 0.5 * float(self.curvatures @ (v * v)), self.curvatures * v

    def loss_many(self, thetas, batch=None):
        self._check_batch(batch)
        thetas = np.atleast_2d(np.asarray(thetas, dtype=np.float64))
        return 0.5 * (thetas * thetas) @ self.curvatures

    def loss_and_grad_many(self, thetas, batches=None):
        thetas = np.atleast_2d(np.asarray(thetas, dtype=np.float64))
        return self.loss_many(thetas), self.curvatures * thetas

    def hessian(self, theta=None) -> np.ndarray:
        return np.diag(self.curvatures)

    def per_example_grads(self, theta, idx=None):
        g = self.loss_and_grad(theta)[1][None, :]
        if idx is None:
            return g
        return np.repeat(g, len(np.atleast_1d(idx)), axis=0)

    def init_theta(self, rng, **kw):
        return ParamVector(rng.uniform(-1.0, 1.0, size=self.dim), self.shapes)

    def descriptor(self):
        return {"kind": "quadratic", "curvatures": self.curvatures.tolist()}
