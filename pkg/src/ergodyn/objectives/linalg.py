"""Matrix-free curvature probes.

hvp approximates the Hessian-vector product of an objective by a central
difference of analytic gradients, so it needs only two gradient calls and
no second derivatives.  operator_norm is the largest singular value of a
weight matrix via power iteration on W^T W; it is the quantity the
compact-domain analysis bounds layer by layer.
"""

from __future__ import annotations

import numpy as np

from ..params import as_values

__all__ = ["hvp", "operator_norm"]


def hvp(objective, theta, v, batch=None, eps: float = 1e-4) -> np.ndarray:
    """Central finite-difference Hessian-vector product.

    The probe radius is eps * (1 + ||theta||) / ||v||, so the actual
    parameter perturbation has norm eps * (1 + ||theta||) regardless of
    the scale of v.  Linearity in v then follows from rescaling.
    """
    theta = as_values(theta)
    v = np.asarray(v, dtype=np.float64)
    if v.shape != theta.shape:
        raise ValueError(f"direction shape {v.shape} != parameter shape {theta.shape}")
    vnorm = float(np.linalg.norm(v))
    if vnorm == 0.0:
        raise ValueError("direction vector is zero")
    r = eps * (1.0 + float(np.linalg.norm(theta))) / vnorm
    _, g_plus = objective.loss_and_grad(theta + r * v, batch)
    _, g_minus = objective.loss_and_grad(theta - r * v, batch)
    return (g_plus - g_minus) / (2.0 * r)


def operator_norm(W, tol: float = 1e-10, max_iter: int = 1000, seed: int = 0) -> float:
    """Largest singular value of W by power iteration on W^T W.

    The start vector is drawn from the given seed, so repeated calls are
    reproducible.  Iteration stops when the squared singular value
    estimate changes by a relative tol, or at max_iter.
    """
    W = np.asarray(W, dtype=np.float64)
    if W.ndim != 2:
        raise ValueError(f"expected a matrix, got shape {W.shape}")
    if not np.all(np.isfinite(W)):
        raise ValueError("non-finite matrix entries")
    if not W.any():
        return 0.0
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x09E2]))
    v = rng.normal(size=W.shape[1])
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(max_iter):
        u = W @ v
        w = W.T @ u
        new_est = float(v @ w)          # Rayleigh quotient of W^T W
        nw = float(np.linalg.norm(w))
        if nw == 0.0:
            # v landed in the null space; restart from a fresh direction
            v = rng.normal(size=W.shape[1])
            v /= np.linalg.norm(v)
            continue
        v = w / nw
        if abs(new_est - est) <= tol * abs(new_est):
            est = new_est
            break
        est = new_est
    return float(np.sqrt(max(est, 0.0)))
