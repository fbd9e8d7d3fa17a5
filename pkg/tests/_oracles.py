"""Independent numerical oracles for the test suite.

Everything here is deliberately written from first principles: central
finite differences for derivatives and a cyclic Jacobi sweep for the
symmetric eigenproblem, so none of it shares code paths (or failure
modes) with the library's backprop, power iteration, or numpy's LAPACK
wrappers.  Slow is fine; these only run on small problems.
"""

from __future__ import annotations

import numpy as np


def finite_diff_grad(f, theta, step: float | None = None) -> np.ndarray:
    """Central-difference gradient of a scalar function of a flat vector."""
    theta = np.asarray(theta, dtype=np.float64)
    if step is None:
        step = 1e-5 * (1.0 + float(np.linalg.norm(theta)))
    grad = np.empty(theta.size)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = step
        grad[i] = (f(theta + e) - f(theta - e)) / (2.0 * step)
    return grad


def finite_diff_hessian(grad_fn, theta, step: float | None = None) -> np.ndarray:
    """Symmetrized central-difference Jacobian of an analytic gradient."""
    theta = np.asarray(theta, dtype=np.float64)
    if step is None:
        step = 1e-5 * (1.0 + float(np.linalg.norm(theta)))
    p = theta.size
    H = np.empty((p, p))
    for i in range(p):
        e = np.zeros_like(theta)
        e[i] = step
        H[i] = (np.asarray(grad_fn(theta + e)) -
                np.asarray(grad_fn(theta - e))) / (2.0 * step)
    return 0.5 * (H + H.T)


def jacobi_eigenvalues(A, sweeps: int = 50, tol: float = 1e-14) -> np.ndarray:
    """All eigenvalues of a symmetric matrix by cyclic Jacobi rotations.

    Returns them sorted ascending.  Meant for p <= 50; cost is O(p^3) per
    sweep and convergence is quadratic once the off-diagonal mass is
    small.
    """
    A = np.array(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("need a square matrix")
    if not np.allclose(A, A.T, atol=1e-12 * (1.0 + np.abs(A).max())):
        raise ValueError("need a symmetric matrix")
    A = 0.5 * (A + A.T)
    p = A.shape[0]
    if p == 1:
        return A[0].copy()
    scale = np.abs(A).max()
    if scale == 0.0:
        return np.zeros(p)
    for _ in range(sweeps):
        off = np.sqrt(np.sum(np.tril(A, -1) ** 2) * 2.0)
        if off <= tol * scale * p:
            break
        for i in range(p - 1):
            for j in range(i + 1, p):
                if abs(A[i, j]) <= 1e-300:
                    continue
                # classic 2x2 symmetric Schur decomposition
                tau = (A[j, j] - A[i, i]) / (2.0 * A[i, j])
                t = np.sign(tau) / (abs(tau) + np.sqrt(1.0 + tau * tau)) \
                    if tau != 0.0 else 1.0
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                rot = np.eye(p)
                rot[i, i] = rot[j, j] = c
                rot[i, j] = s
                rot[j, i] = -s
                A = rot.T @ A @ rot
                A = 0.5 * (A + A.T)
    return np.sort(np.diag(A))


def jacobi_extreme_eigenvalue(A) -> float:
    """Largest-magnitude eigenvalue of a symmetric matrix."""
    vals = jacobi_eigenvalues(A)
    return float(vals[np.argmax(np.abs(vals))])


def jacobi_singular_values(M) -> np.ndarray:
    """Singular values of a rectangular matrix, descending.

    Uses the Jacobi eigensolve on the smaller Gram matrix; fine at test
    scale, and entirely LAPACK-free.
    """
    M = np.asarray(M, dtype=np.float64)
    gram = M @ M.T if M.shape[0] <= M.shape[1] else M.T @ M
    vals = jacobi_eigenvalues(gram)
    return np.sqrt(np.clip(vals, 0.0, None))[::-1]


def enumerated_time_average(values) -> float:
    """Plain running mean, the definition a time average must match."""
    values = np.asarray(values, dtype=np.float64)
    return float(values.sum() / values.size)
