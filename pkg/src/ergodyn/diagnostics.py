"""Per-iterate training quantities and their estimators.

For the finite-sum loss L_S with per-example gradients g_i, the quantities
tracked here are the full loss, the gradient norm ||grad L_S||, the
sampling noise  sigma = sqrt(mean_i ||g_i - grad L_S||^2), and the raw
second moment  g2 = mean_i ||g_i||^2.  These satisfy the decomposition
sigma^2 + ||grad L_S||^2 = g2 exactly, which doubles as a self-test.

sharpness estimates the extreme Hessian eigenvalue by power iteration on
finite-difference Hessian-vector products; its sign is the Rayleigh
quotient's, so a strict maximum reports a positive value and a strict
peak reports a negative one.  eos_ratio relates the squared gradient norm
to eta * sharpness * g2; an exactly period-two orbit of a quadratic pins
this ratio at 1/(eta * curvature), i.e. one half at the stability edge,
a factor two below the back-of-envelope balance ||grad||^2 = eta * L * G^2
that motivates it.  The ratio is reported as-is; the discrepancy is the
heuristic's, not the estimator's.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields

import numpy as np

from .dynamics import Trajectory
from .objectives.base import Objective
from .objectives.linalg import hvp
from .params import as_values

__all__ = [
    "GradientStats", "DiagnosticsRecord", "EpochLossPair",
    "full_quantities", "sharpness", "eos_ratio", "epoch_losses",
    "diagnose", "write_diagnostics_csv", "write_epoch_csv", "plot_csv",
]

_SUBSAMPLE_STREAM = 0xD1A6


@dataclass
class GradientStats:
    loss: float
    grad_norm: float
    noise: float
    g2: float
    sample_size: int


@dataclass
class DiagnosticsRecord:
    """One diagnostics row; field order is the CSV column order."""

    step: int
    eta: float
    loss: float
    grad_norm: float
    noise: float
    sharpness: float
    g2: float
    eos_ratio: float
    sample_size: int


@dataclass
class EpochLossPair:
    epoch: int
    moving_loss: float     # mean of the recorded minibatch losses of the epoch
    fixed_loss: float      # full-sample loss at the epoch's final iterate


def full_quantities(objective: Objective, theta, sample_size: int | None = None,
                    rng=None) -> GradientStats:
    """Loss, gradient norm, noise and second moment at theta.

    sample_size=None (or N) computes them exactly from all per-example
    gradients.  A smaller sample_size draws that many distinct examples
    with the given rng; the noise estimate then uses the n-1 normalizer.
    """
    theta = as_values(theta)
    N = objective.num_examples
    if not objective.has_per_example:
        # batch statistics couple the examples: loss and gradient are still
        # well defined on the full set, the noise decomposition is not
        loss, grad = objective.loss_and_grad(theta)
        return GradientStats(loss=float(loss),
                             grad_norm=float(np.linalg.norm(grad)),
                             noise=float("nan"), g2=float("nan"),
                             sample_size=N)
    if sample_size is None or sample_size >= N:
        grads = objective.per_example_grads(theta)
        loss = objective.loss(theta)
        n = N
    else:
        if sample_size < 1:
            raise ValueError("sample_size must be >= 1")
        if rng is None:
            raise ValueError("subsampled quantities need an rng")
        idx = rng.choice(N, size=sample_size, replace=False)
        grads = objective.per_example_grads(theta, idx)
        loss = objective.loss(theta, idx)
        n = sample_size
    mean_grad = grads.mean(axis=0)
    grad_norm = float(np.linalg.norm(mean_grad))
    g2 = float(np.mean(np.einsum("nd,nd->n", grads, grads)))
    if n >= 2:
        dev = grads - mean_grad
        denom = n if n == N else n - 1
        noise = float(np.sqrt(np.einsum("nd,nd->", dev, dev) / denom))
    else:
        noise = 0.0 if n == N else float("nan")
    return GradientStats(loss=float(loss), grad_norm=grad_norm, noise=noise,
                         g2=g2, sample_size=n)


def sharpness(objective: Objective, theta, batch=None, tol: float = 1e-6,
              max_iter: int = 200, seed: int = 0, eps: float = 1e-4,
              return_info: bool = False):
    """Extreme Hessian eigenvalue by power iteration on matrix-free HVPs.

    Stops when successive Rayleigh estimates agree to a relative tol.
    The returned value is signed; its magnitude is the spectral radius of
    the Hessian whenever a single eigenvalue dominates.
    """
    theta = as_values(theta)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x54A2]))
    v = rng.normal(size=theta.size)
    v /= np.linalg.norm(v)
    lam = 0.0
    converged = False
    iterations = 0
    for k in range(1, max_iter + 1):
        iterations = k
        w = hvp(objective, theta, v, batch=batch, eps=eps)
        new_lam = float(v @ w)
        nw = float(np.linalg.norm(w))
        if nw == 0.0:
            # v is annihilated; try a fresh direction before giving up
            v = rng.normal(size=theta.size)
            v /= np.linalg.norm(v)
            lam = new_lam
            continue
        v = w / nw
        if k > 1 and abs(new_lam - lam) <= tol * abs(new_lam):
            lam = new_lam
            converged = True
            break
        lam = new_lam
    if return_info:
        return lam, {"converged": converged, "iterations": iterations}
    return lam


def eos_ratio(grad_norm: float, eta: float, sharp: float, g2: float) -> float:
    """||grad||^2 / (eta * |sharpness| * g2); nan when the denominator
    vanishes or is not finite."""
    denom = eta * abs(sharp) * g2
    if not np.isfinite(denom) or denom == 0.0:
        return float("nan")
    return float(grad_norm ** 2 / denom)


def epoch_losses(traj: Trajectory, objective: Objective) -> list[EpochLossPair]:
    """Two views of training progress per completed epoch.

    moving: the average of the minibatch losses recorded while the epoch
    ran (each evaluated at a different iterate, the quantity a training
    log shows).  fixed: the full-sample loss at the single iterate that
    ends the epoch.  Needs those iterates stored, so the trajectory
    stride must divide the epoch length.
    """
    spe = traj.steps_per_epoch
    epochs = traj.num_steps // spe
    if epochs < 1:
        raise ValueError(
            f"trajectory has {traj.num_steps} steps, shorter than one epoch ({spe})"
        )
    ends = np.arange(1, epochs + 1) * spe
    try:
        iterates = np.stack([traj.iterate_at(int(s)) for s in ends])
    except KeyError as exc:
        raise ValueError(
            f"epoch-end iterates missing: stride {traj.stride} does not "
            f"divide the epoch length {spe}"
        ) from exc
    fixed = objective.loss_many(iterates)
    out = []
    for e in range(epochs):
        moving = float(np.mean(traj.losses[e * spe:(e + 1) * spe]))
        out.append(EpochLossPair(epoch=e, moving_loss=moving,
                                 fixed_loss=float(fixed[e])))
    return out


def diagnose(traj: Trajectory, objective: Objective,
             sample_size: int | None = None, compute_sharpness: bool = True,
             seed: int = 0, sharpness_kwargs: dict | None = None
             ) -> list[DiagnosticsRecord]:
    """Diagnostics at every stored iterate of a trajectory.

    The eta column is the step size the schedule applies at that step.
    Subsampling (when sample_size < N) draws an independent example set
    per record from the given seed.
    """
    records = []
    kwargs = sharpness_kwargs or {}
    for k, step in enumerate(traj.iterate_steps):
        theta = traj.iterates[k]
        rng = np.random.default_rng(
            np.random.SeedSequence([int(seed), _SUBSAMPLE_STREAM, int(step)]))
        stats = full_quantities(objective, theta, sample_size, rng)
        if compute_sharpness:
            sharp = sharpness(objective, theta, seed=seed, **kwargs)
        else:
            sharp = float("nan")
        eta = traj.schedule.value(int(step), traj.steps_per_epoch)
        records.append(DiagnosticsRecord(
            step=int(step), eta=eta, loss=stats.loss,
            grad_norm=stats.grad_norm, noise=stats.noise, sharpness=sharp,
            g2=stats.g2,
            eos_ratio=eos_ratio(stats.grad_norm, eta, sharp, stats.g2),
            sample_size=stats.sample_size,
        ))
    return records


_DIAG_COLUMNS = [f.name for f in fields(DiagnosticsRecord)]


def write_diagnostics_csv(records, path) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(_DIAG_COLUMNS) + "\n")
        for r in records:
            vals = []
            for name in _DIAG_COLUMNS:
                v = getattr(r, name)
                vals.append(str(v) if isinstance(v, int) else format(v, ".17g"))
            fh.write(",".join(vals) + "\n")


def write_epoch_csv(pairs, path) -> None:
    with open(path, "w") as fh:
        fh.write("epoch,moving_loss,fixed_loss\n")
        for p in pairs:
            fh.write(f"{p.epoch},{p.moving_loss:.17g},{p.fixed_loss:.17g}\n")


def plot_csv(csv_path, out_dir) -> list[str]:
    """One SVG per numeric column, plotted against the first column.

    Purely cosmetic; the files carry no timestamps so reruns are stable.
    """
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    plt.rcParams["svg.hashsalt"] = "ergodyn"

    with open(csv_path) as fh:
        header = fh.readline().strip().split(",")
    data = np.genfromtxt(csv_path, delimiter=",", skip_header=1)
    data = np.atleast_2d(data)
    os.makedirs(out_dir, exist_ok=True)
    x = data[:, 0]
    written = []
    for j, col in enumerate(header[1:], start=1):
        fig, ax = plt.subplots(figsize=(5, 3.2))
        ax.plot(x, data[:, j], lw=1.0)
        ax.set_xlabel(header[0])
        ax.set_ylabel(col)
        ax.grid(True, alpha=0.3)
        fig.tight_layout()
        out = os.path.join(out_dir, f"{col}.svg")
        fig.savefig(out, metadata={"Date": None})
        plt.close(fig)
        written.append(out)
    return written
