"""Empirical measures over trajectories and invariance statistics.

The running average mu_n = (1/n) sum_{t=1..n} delta_{theta_t} treats a
training run as samples of a Markov chain.  If the chain has settled into
a stationary law, then for any bounded observable phi the change of phi
under one more update step averages out, and the statistic

    Delta_n = (1/n) sum_{t=1..n} [ phi(theta_t) - phi(F(theta_t)) ]

must shrink.  With a deterministic map the sum telescopes and Delta_n is
exactly (phi(theta_1) - phi(theta_{n+1})) / n.  With minibatch sampling,
F is re-drawn independently of the trajectory ("resample" mode below), so
each term is a genuine one-step test function; a concentration envelope
of width M sqrt(2 log(2/delta) / n) + 2M/n then covers Delta_n with
probability 1 - delta when the chain is stationary.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .dynamics import Trajectory, UpdateMap
from .objectives.base import Objective
from .params import as_values

__all__ = [
    "EmpiricalMeasure", "Observable", "VanishingChangeReport",
    "build_measure", "time_average", "vanishing_change",
    "vanishing_change_sweep", "invariance_residual", "measure_distance",
    "loss_observable", "grad_norm_observable", "coordinate_observable",
    "resample_rng",
]

_RESAMPLE_STREAM = 0x0F5A
_WEIGHT_TOL = 1e-12


@dataclass
class EmpiricalMeasure:
    """Weighted atoms in parameter space; weights are a probability vector."""

    atoms: np.ndarray                    # (K, dim)
    weights: np.ndarray | None = None    # (K,), defaults to uniform

    def __post_init__(self):
        self.atoms = np.atleast_2d(np.asarray(self.atoms, dtype=np.float64))
        if self.atoms.size == 0:
            raise ValueError("measure needs at least one atom")
        if not np.all(np.isfinite(self.atoms)):
            raise ValueError("atoms contain non-finite entries")
        K = self.atoms.shape[0]
        if self.weights is None:
            self.weights = np.full(K, 1.0 / K)
        else:
            self.weights = np.asarray(self.weights, dtype=np.float64)
            if self.weights.shape != (K,):
                raise ValueError(f"weights must be ({K},), got {self.weights.shape}")
            if self.weights.min() < 0:
                raise ValueError("weights must be non-negative")
            if abs(self.weights.sum() - 1.0) > _WEIGHT_TOL:
                raise ValueError(
                    f"weights sum to {self.weights.sum():.17g}, not 1"
                )

    @property
    def num_atoms(self) -> int:
        return self.atoms.shape[0]

    @property
    def dim(self) -> int:
        return self.atoms.shape[1]


@dataclass
class Observable:
    """A named scalar function of the parameters with a known (or inferred)
    bound M on |phi| over the region of interest."""

    name: str
    fn: object                           # (K, dim) -> (K,)
    bound: float | None = None

    def __call__(self, atoms: np.ndarray) -> np.ndarray:
        atoms = np.atleast_2d(np.asarray(atoms, dtype=np.float64))
        vals = np.asarray(self.fn(atoms), dtype=np.float64)
        if vals.shape != (atoms.shape[0],):
            raise ValueError(
                f"observable {self.name!r} returned shape {vals.shape}, "
                f"expected ({atoms.shape[0]},)"
            )
        return vals


def loss_observable(objective: Objective, name: str = "loss") -> Observable:
    """Full-sample loss of the base objective as an observable."""
    return Observable(name, lambda atoms: objective.loss_many(atoms))


def grad_norm_observable(objective: Objective, name: str = "grad_norm") -> Observable:
    def fn(atoms):
        _, grads = objective.loss_and_grad_many(atoms)
        return np.linalg.norm(grads, axis=1)
    return Observable(name, fn)


def coordinate_observable(index: int) -> Observable:
    return Observable(f"theta_{index}", lambda atoms: atoms[:, index])


def build_measure(traj: Trajectory, burn_in: int = 0) -> EmpiricalMeasure:
    """Uniform measure over the stored iterates with step index > burn_in.

    The initialization theta_0 is never an atom; with stride 1 and
    burn_in 0 this is exactly the running average mu_n.
    """
    if burn_in < 0:
        raise ValueError("burn_in must be >= 0")
    mask = traj.iterate_steps > burn_in
    if not mask.any():
        raise ValueError(
            f"no stored iterates after burn_in={burn_in} "
            f"(last stored step is {traj.iterate_steps[-1]})"
        )
    return EmpiricalMeasure(traj.iterates[mask])


def time_average(measure: EmpiricalMeasure, observable: Observable) -> float:
    return float(measure.weights @ observable(measure.atoms))


def resample_rng(seed: int) -> np.random.Generator:
    """The stream used for independently re-drawn one-step batches."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), _RESAMPLE_STREAM]))


@dataclass
class VanishingChangeReport:
    observable: str
    mode: str                        # "resample" or "shift"
    deterministic: bool
    n_grid: np.ndarray
    delta_n: np.ndarray              # the statistic at each n
    envelope: np.ndarray             # concentration envelope at each n
    contained: np.ndarray            # |delta_n| <= envelope
    M: float
    delta: float                     # envelope confidence parameter
    slope: float                     # log-log fit of |delta_n| against n
    num_steps: int
    seed: int

    @property
    def all_contained(self) -> bool:
        return bool(self.contained.all())

    def to_dict(self) -> dict:
        return {
            "observable": self.observable,
            "mode": self.mode,
            "deterministic": self.deterministic,
            "n_grid": [int(n) for n in self.n_grid],
            "delta_n": [float(v) for v in self.delta_n],
            "envelope": [float(v) for v in self.envelope],
            "contained": [bool(b) for b in self.contained],
            "all_contained": self.all_contained,
            "M": float(self.M),
            "delta": float(self.delta),
            "slope": float(self.slope),
            "num_steps": int(self.num_steps),
            "seed": int(self.seed),
        }


def hoeffding_envelope(M: float, delta: float, n) -> np.ndarray:
    n = np.asarray(n, dtype=np.float64)
    return M * np.sqrt(2.0 * np.log(2.0 / delta) / n) + 2.0 * M / n


def _default_grid(n_max: int) -> np.ndarray:
    grid = []
    n = 10
    while n <= n_max:
        grid.append(n)
        n *= 10
    if not grid or grid[-1] != n_max:
        grid.append(n_max)
    return np.asarray(grid, dtype=np.int64)


def _loglog_slope(n_grid, values) -> float:
    mags = np.abs(np.asarray(values, dtype=np.float64))
    keep = mags > 1e-300
    if keep.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(np.asarray(n_grid, float)[keep]),
                            np.log(mags[keep]), 1)[0])


def _finish_report(observable, mode, deterministic, n_grid, sums, M, delta,
                   num_steps, seed) -> VanishingChangeReport:
    delta_n = sums / n_grid
    envelope = hoeffding_envelope(M, delta, n_grid)
    contained = np.abs(delta_n) <= envelope
    slope = _loglog_slope(n_grid, delta_n)
    return VanishingChangeReport(
        observable=observable, mode=mode, deterministic=deterministic,
        n_grid=np.asarray(n_grid, dtype=np.int64),
        delta_n=delta_n, envelope=envelope, contained=contained,
        M=float(M), delta=float(delta), slope=slope,
        num_steps=int(num_steps), seed=int(seed),
    )


def vanishing_change(traj: Trajectory, update_map: UpdateMap,
                     observable: Observable, delta: float = 0.1,
                     n_grid=None, rng=None, mode: str = "resample"
                     ) -> VanishingChangeReport:
    """The statistic Delta_n over a stored trajectory.

    resample mode re-draws an independent minibatch for every atom (using
    rng, or the trajectory seed's dedicated resample stream); shift mode
    reuses the recorded next iterate, in which case the sum telescopes by
    construction and says nothing beyond the endpoint difference, so it
    is only useful as a baseline.  Deterministic maps make the two modes
    coincide.  Requires stride 1: rate statements need every iterate.
    """
    if traj.stride != 1:
        raise ValueError(
            f"vanishing_change needs stride 1, this trajectory has stride "
            f"{traj.stride}; rerun with every iterate stored"
        )
    if not (0 < delta < 1):
        raise ValueError("delta must be in (0, 1)")
    if mode not in ("resample", "shift"):
        raise ValueError(f"unknown mode {mode!r}")
    deterministic = update_map.is_deterministic
    n_steps = traj.num_steps
    n_max = n_steps if (mode == "resample" and not deterministic) else n_steps - 1
    if n_max < 1:
        raise ValueError("trajectory is too short")
    n_grid = _default_grid(n_max) if n_grid is None else np.asarray(n_grid, dtype=np.int64)
    if n_grid.min() < 1 or n_grid.max() > n_max:
        raise ValueError(f"n_grid must lie in [1, {n_max}]")

    atoms = traj.iterates[1:n_max + 1]           # theta_1 .. theta_{n_max}
    phi_now = observable(atoms)
    obj, gamma = update_map.objective, update_map.gamma
    if deterministic or mode == "shift":
        phi_next = observable(traj.iterates[2:n_max + 2])
    else:
        if rng is None:
            rng = resample_rng(traj.seed)
        m = update_map.batch_size
        batches = rng.integers(0, obj.num_examples, size=(n_max, m))
        etas = np.array([update_map.eta(t) for t in range(1, n_max + 1)])
        _, grads = obj.loss_and_grad_many(atoms, batches)
        pushed = (1.0 - etas[:, None] * gamma) * atoms - etas[:, None] * grads
        phi_next = observable(pushed)

    if observable.bound is not None:
        M = float(observable.bound)
    else:
        M = 2.0 * float(np.max(np.abs(np.concatenate([phi_now, phi_next]))))
        warnings.warn(
            f"observable {observable.name!r} has no bound; using "
            f"2*max|phi| = {M:.6g} observed on the trajectory",
            stacklevel=2,
        )
    sums = np.cumsum(phi_now - phi_next)[n_grid - 1]
    return _finish_report(observable.name, mode, deterministic, n_grid, sums,
                          M, delta, n_steps, traj.seed)


def vanishing_change_sweep(update_map: UpdateMap, seeds, num_steps: int,
                           observable: Observable, delta: float = 0.1,
                           n_grid=None, init_kwargs: dict | None = None
                           ) -> list[VanishingChangeReport]:
    """Delta_n for many seeds at once, streaming over steps.

    Equivalent to running run_trajectory + vanishing_change per seed (the
    same init, batch and resample streams are used), but the chains are
    advanced together and nothing of size seeds x steps x dim is ever
    held.  Intended for stochastic maps in resample mode.
    """
    seeds = [int(s) for s in seeds]
    if num_steps < 1:
        raise ValueError("num_steps must be >= 1")
    if not (0 < delta < 1):
        raise ValueError("delta must be in (0, 1)")
    obj, gamma = update_map.objective, update_map.gamma
    m = update_map.batch_size
    n_grid = _default_grid(num_steps) if n_grid is None else np.asarray(n_grid, np.int64)
    if n_grid.min() < 1 or n_grid.max() > num_steps:
        raise ValueError(f"n_grid must lie in [1, {num_steps}]")
    S = len(seeds)
    thetas = np.stack([
        as_values(obj.init_theta(update_map.init_rng(s), **(init_kwargs or {})))
        for s in seeds
    ])
    samplers = [update_map.batch_sampler(s) for s in seeds]
    resamplers = [resample_rng(s) for s in seeds]

    sums = np.zeros(S)
    grid_sums = np.empty((S, n_grid.size))
    max_abs_phi = np.zeros(S)
    grid_pos = {int(n): k for k, n in enumerate(n_grid)}
    for t in range(num_steps):
        eta_t = update_map.eta(t)
        batch = np.stack([smp.next_batch() for smp in samplers])
        _, grads = obj.loss_and_grad_many(thetas, batch)
        thetas = (1.0 - eta_t * gamma) * thetas - eta_t * grads
        # thetas now holds theta_{t+1}; accumulate its one-step test term
        step_idx = t + 1
        phi_now = observable(thetas)
        rebatch = np.stack([r.integers(0, obj.num_examples, size=m)
                            for r in resamplers])
        _, regrads = obj.loss_and_grad_many(thetas, rebatch)
        eta_push = update_map.eta(step_idx)
        pushed = (1.0 - eta_push * gamma) * thetas - eta_push * regrads
        phi_next = observable(pushed)
        sums += phi_now - phi_next
        max_abs_phi = np.maximum(max_abs_phi,
                                 np.maximum(np.abs(phi_now), np.abs(phi_next)))
        if step_idx in grid_pos:
            grid_sums[:, grid_pos[step_idx]] = sums

    reports = []
    for i, seed in enumerate(seeds):
        M = observable.bound if observable.bound is not None else 2.0 * max_abs_phi[i]
        reports.append(_finish_report(
            observable.name, "resample", update_map.is_deterministic,
            n_grid, grid_sums[i], M, delta, num_steps, seed,
        ))
    return reports


def invariance_residual(measure: EmpiricalMeasure, update_map: UpdateMap,
                        observable: Observable, num_resamples: int = 32,
                        rng=None, eta: float | None = None
                        ) -> tuple[float, float]:
    """E_mu[phi] - E_mu[phi(F(theta))] with a std error over batch redraws.

    Each resample pushes every atom through one freshly sampled update
    step (at the map's step-0 eta unless given) and compares the averaged
    observable.  For a deterministic map all resamples agree and the
    standard error is exactly zero.
    """
    if num_resamples < 1:
        raise ValueError("num_resamples must be >= 1")
    if rng is None:
        rng = resample_rng(update_map.seed)
    obj, gamma = update_map.objective, update_map.gamma
    eta = update_map.eta(0) if eta is None else float(eta)
    base = time_average(measure, observable)
    vals = np.empty(num_resamples)
    atoms = measure.atoms
    for r in range(num_resamples):
        if update_map.is_deterministic:
            _, grads = obj.loss_and_grad_many(atoms)
        else:
            batches = rng.integers(0, obj.num_examples,
                                   size=(atoms.shape[0], update_map.batch_size))
            _, grads = obj.loss_and_grad_many(atoms, batches)
        pushed = (1.0 - eta * gamma) * atoms - eta * grads
        vals[r] = float(measure.weights @ observable(pushed))
    residual = base - float(vals.mean())
    if num_resamples == 1:
        return residual, 0.0
    stderr = float(vals.std(ddof=1) / np.sqrt(num_resamples))
    return residual, stderr


def measure_distance(mu: EmpiricalMeasure, nu: EmpiricalMeasure,
                     num_directions: int = 64, seed: int = 0) -> float:
    """Sliced energy distance between two weighted atom sets.

    Both measures are projected onto shared random unit directions; in
    each direction the one-dimensional energy distance comes from the
    closed form  d^2 = 2 * integral (F_mu - F_nu)^2 dt  over the merged
    support, computed exactly for step CDFs.  The average over a fixed
    set of directions is symmetric, vanishes iff all projections agree,
    and inherits the triangle inequality from each direction.
    """
    if mu.dim != nu.dim:
        raise ValueError(f"dimension mismatch: {mu.dim} vs {nu.dim}")
    if num_directions < 1:
        raise ValueError("need at least one direction")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xD157]))
    dirs = rng.normal(size=(num_directions, mu.dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)

    px = mu.atoms @ dirs.T               # (Kx, D)
    py = nu.atoms @ dirs.T               # (Ky, D)
    Kx, Ky = px.shape[0], py.shape[0]
    pooled = np.concatenate([px, py], axis=0).T          # (D, Kx+Ky)
    wx = np.concatenate([mu.weights, np.zeros(Ky)])
    wy = np.concatenate([np.zeros(Kx), nu.weights])
    order = np.argsort(pooled, axis=1, kind="stable")
    t_sorted = np.take_along_axis(pooled, order, axis=1)
    Fx = np.cumsum(wx[order], axis=1)
    Fy = np.cumsum(wy[order], axis=1)
    gaps = np.diff(t_sorted, axis=1)
    sq = (Fx[:, :-1] - Fy[:, :-1]) ** 2
    d2 = 2.0 * np.sum(sq * gaps, axis=1)
    return float(np.mean(np.sqrt(np.maximum(d2, 0.0))))
