"""Mechanical checkers for the stability guarantees of decayed SGD.

Each checker instantiates the preconditions of one guarantee, runs the
implied experiment, and compares measured maxima against the stated
bounds:

* :func:`check_compact_domain` -- with weight decay ``gamma`` and step
  size ``eta <= 1/gamma``, iterates of an ``L``-layer net initialized
  with every ``||W_l||_op <= w`` never leave that ball, and the
  training loss stays under an explicit constant.
* :func:`check_bn_bounds` -- with a batch-norm output layer the
  normalized features and the learned scale stay inside hard boxes.
* :func:`check_smaller_step` -- averaged over a (near-)invariant
  measure, some small enough multiple ``c`` of the step size gives an
  expected one-step decrease of the regularized loss.
* :func:`check_ce_lemma` -- bounded-logit properties of cross-entropy:
  value bound ``|l| <= c + log d``, gradient norm ``<= sqrt(2)``, and
  the matching Lipschitz constant.

Every report embeds its exact configuration and seeds, serializes to
``<name>_report.json`` via :func:`write_report`, and renders a one-line
PASS / FAIL / N-A summary with margins.  Precondition violations that
make a check meaningless raise :class:`PreconditionError`; soft
violations (running a deliberate negative test) downgrade the verdict
to not-applicable instead of asserting pass or fail.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .dynamics import Schedule, UpdateMap
from .measures import EmpiricalMeasure
from .objectives import RegularizedObjective, hvp
from .objectives.batchnorm import BatchNormMlpObjective
from .params import unpack_many

__all__ = [
    "C_ELL",
    "DEFAULT_C_GRID",
    "EPS_STAT",
    "PreconditionError",
    "CompactDomainReport",
    "BnReport",
    "SmallerStepReport",
    "CeLemmaReport",
    "InvarianceResult",
    "check_compact_domain",
    "check_bn_bounds",
    "detect_invariance",
    "check_smaller_step",
    "check_ce_lemma",
    "write_report",
]

C_ELL = float(np.sqrt(2.0))
DEFAULT_C_GRID = (0.5, 0.2, 0.1, 0.05, 0.02, 0.01)
EPS_STAT = 1e-6
OPNORM_TOL = 1e-8
SCALE_TOL = 1e-10
CE_SLACK = 1e-12

_SMALLSTEP_STREAM = 0x5C17
_CE_STREAM = 0xCE1A

_VERDICT_WORD = {"pass": "PASS", "fail": "FAIL", "not_applicable": "N-A"}


class PreconditionError(ValueError):
    """A checker's structural precondition cannot be satisfied at all
    (wrong architecture, missing weight decay, too few atoms).  Soft
    precondition violations run in negative-test mode instead."""


def _seed_list(seed) -> list[int]:
    if np.isscalar(seed):
        return [int(seed)]
    return [int(s) for s in seed]


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, np.generic):
        return x.item()
    return x


def write_report(report, out_dir) -> Path:
    """Serialize a checker report to ``<out_dir>/<name>_report.json``.

    Keys are sorted and no timestamps are embedded, so rerunning the
    same configuration rewrites the same bytes.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{report.name}_report.json"
    text = json.dumps(_jsonable(report.to_dict()), sort_keys=True, indent=2)
    path.write_text(text + "\n")
    return path


def _stacked_opnorms(thetas: np.ndarray, shapes) -> np.ndarray:
    """Spectral norm of every weight block of every row, (T, L)."""
    blocks = unpack_many(shapes, thetas)
    out = np.empty((thetas.shape[0], len(blocks)))
    for j, mat in enumerate(blocks):
        out[:, j] = np.linalg.svd(mat, compute_uv=False)[..., 0]
    return out


# ---------------------------------------------------------------------------
# compact-domain containment


@dataclass
class CompactDomainReport:
    """Measured operator norms and losses against the invariant-ball
    radius w = (gamma / (c_ell * c_sigma**L))**(1/(L-2)) and the loss
    constant log d + (gamma / (c_ell * c_sigma**2))**(L/(L-2))."""

    L: int
    gamma: float
    eta: float
    c_sigma: float
    c_ell: float
    w: float
    loss_bound: float | None
    steps: int
    seeds: list[int]
    batch_size: int
    sampling: str
    w_init: float
    precondition_ok: bool
    init_inside: bool
    opnorm_tol: float
    max_opnorm: float
    opnorm_violations: int
    first_violation_step: int | None
    final_inside: bool
    per_seed_max_opnorm: list[float]
    max_abs_loss: float | None
    loss_violations: int
    max_abs_minibatch_loss: float
    diverged: bool
    diverged_step: int | None
    verdict: str
    config: dict
    opnorm_series: np.ndarray | None = None
    loss_series: np.ndarray | None = None

    name = "compact_domain"

    def to_dict(self) -> dict:
        d = {
            "L": self.L, "gamma": self.gamma, "eta": self.eta,
            "c_sigma": self.c_sigma, "c_ell": self.c_ell, "w": self.w,
            "loss_bound": self.loss_bound, "steps": self.steps,
            "seeds": self.seeds, "batch_size": self.batch_size,
            "sampling": self.sampling, "w_init": self.w_init,
            "precondition_ok": self.precondition_ok,
            "init_inside": self.init_inside,
            "opnorm_tol": self.opnorm_tol, "max_opnorm": self.max_opnorm,
            "opnorm_violations": self.opnorm_violations,
            "first_violation_step": self.first_violation_step,
            "final_inside": self.final_inside,
            "per_seed_max_opnorm": self.per_seed_max_opnorm,
            "max_abs_loss": self.max_abs_loss,
            "loss_violations": self.loss_violations,
            "max_abs_minibatch_loss": self.max_abs_minibatch_loss,
            "diverged": self.diverged, "diverged_step": self.diverged_step,
            "verdict": self.verdict, "config": self.config,
        }
        return d

    def summary_line(self) -> str:
        word = _VERDICT_WORD[self.verdict]
        loss_part = "no loss bound (objective has no class count)"
        if self.loss_bound is not None:
            loss_part = (f"max |L_S| {self.max_abs_loss:.9g} vs "
                         f"{self.loss_bound:.9g}")
        return (f"compact_domain: {word}  max ||W||_op {self.max_opnorm:.9g} "
                f"vs {self.w:.9g}+{self.opnorm_tol:g}, {loss_part}, "
                f"{self.opnorm_violations + self.loss_violations} violations "
                f"over {self.steps} steps x {len(self.seeds)} seeds")


def check_compact_domain(objective, gamma: float, eta: float, *, steps: int,
                         seed, batch_size: int = 1, sampling: str = "iid",
                         w_init: float | None = None, c_sigma: float = 1.0,
                         store_series: bool = False) -> CompactDomainReport:
    """Run SGD with weight decay and verify that every iterate's every
    weight matrix keeps operator norm <= w + 1e-8 and the full training
    loss keeps |L_S| <= log d + (gamma/(c_ell c_sigma^2))^(L/(L-2)).

    The objective's parameter blocks must all be weight matrices and
    there must be at least L = 3 of them, since the ball radius
    w = (gamma/(c_ell c_sigma^L))^(1/(L-2)) needs L > 2.  Initialization
    draws every layer with operator norm uniform in [0, w_init]; the
    default w_init = w starts inside the ball.  eta > 1/gamma runs in
    negative-test mode: statistics are recorded but the verdict is
    not-applicable.  Supported activations are 1-Lipschitz and fix the
    origin, so the default c_sigma = 1 applies to all of them.

    ``seed`` may be one seed or a sequence; the sweep is vectorized
    across seeds with each seed's batch stream identical to what
    ``run_trajectory`` would draw for it.
    """
    shapes = tuple(objective.shapes)
    if any(len(s) != 2 for s in shapes):
        raise PreconditionError(
            "compact-domain check needs every parameter block to be a "
            f"weight matrix; got shapes {shapes}")
    L = len(shapes)
    if L < 3:
        raise PreconditionError(
            f"the ball radius exponent 1/(L-2) needs at least L=3 affine "
            f"layers, got L={L}")
    if gamma <= 0:
        raise PreconditionError("weight decay gamma must be positive")
    if eta <= 0:
        raise PreconditionError("step size eta must be positive")
    if c_sigma <= 0:
        raise PreconditionError("activation Lipschitz constant must be positive")

    w = float((gamma / (C_ELL * c_sigma ** L)) ** (1.0 / (L - 2)))
    dataset = getattr(objective, "dataset", None)
    loss_bound = None
    if dataset is not None:
        d = dataset.num_classes
        loss_bound = float(np.log(d)
                           + (gamma / (C_ELL * c_sigma ** 2)) ** (L / (L - 2)))
    if w_init is None:
        w_init = w
    precondition_ok = eta <= 1.0 / gamma

    seeds = _seed_list(seed)
    um = UpdateMap(objective, Schedule.constant(eta), gamma=gamma,
                   batch_size=batch_size, sampling=sampling, seed=seeds[0])
    if sampling == "epoch_shuffle" and objective.num_examples % batch_size:
        raise PreconditionError(
            "the vectorized seed sweep needs equal-size batches; with "
            "epoch_shuffle the batch size must divide the example count")
    samplers = [um.batch_sampler(s) for s in seeds]
    thetas = np.stack([np.asarray(objective.init_theta(um.init_rng(s),
                                                       w_init=w_init))
                       for s in seeds])
    T = len(seeds)

    opn_cap = w + OPNORM_TOL
    opn = _stacked_opnorms(thetas, shapes)
    init_inside = bool((opn <= opn_cap).all())
    per_seed_max = opn.max(axis=1)
    max_opnorm = float(per_seed_max.max())
    opnorm_violations = int((opn > opn_cap).sum())
    first_violation = 0 if opnorm_violations else None

    def full_losses(th):
        return objective.loss_many(th) if loss_bound is not None else None

    fl = full_losses(thetas)
    max_abs_loss = float(np.abs(fl).max()) if fl is not None else None
    loss_violations = int((np.abs(fl) > loss_bound).sum()) if fl is not None else 0
    max_abs_mb = 0.0

    opn_series = np.empty(steps + 1) if store_series else None
    loss_series = np.empty(steps + 1) if store_series else None
    if store_series:
        opn_series[0] = max_opnorm
        loss_series[0] = np.nan if fl is None else float(np.abs(fl).max())

    contraction = 1.0 - eta * gamma
    diverged = False
    diverged_step = None
    for step in range(steps):
        batches = np.stack([smp.next_batch() for smp in samplers])
        mb_losses, grads = objective.loss_and_grad_many(thetas, batches)
        if not np.all(np.isfinite(grads)):
            diverged, diverged_step = True, step
            break
        max_abs_mb = max(max_abs_mb, float(np.abs(mb_losses).max()))
        thetas = contraction * thetas - eta * grads
        if not np.all(np.isfinite(thetas)):
            diverged, diverged_step = True, step
            break
        opn = _stacked_opnorms(thetas, shapes)
        row_max = opn.max(axis=1)
        np.maximum(per_seed_max, row_max, out=per_seed_max)
        bad = int((opn > opn_cap).sum())
        if bad and first_violation is None:
            first_violation = step + 1
        opnorm_violations += bad
        fl = full_losses(thetas)
        if fl is not None:
            max_abs_loss = max(max_abs_loss, float(np.abs(fl).max()))
            loss_violations += int((np.abs(fl) > loss_bound).sum())
        if store_series:
            opn_series[step + 1] = row_max.max()
            loss_series[step + 1] = (np.nan if fl is None
                                     else float(np.abs(fl).max()))
    max_opnorm = float(per_seed_max.max())
    final_inside = (not diverged
                    and bool((_stacked_opnorms(thetas, shapes) <= opn_cap).all()))

    if not precondition_ok or not init_inside:
        verdict = "not_applicable"
    elif diverged or opnorm_violations or loss_violations:
        verdict = "fail"
    else:
        verdict = "pass"

    if diverged and store_series:
        opn_series = opn_series[:diverged_step + 1]
        loss_series = loss_series[:diverged_step + 1]

    config = {
        "objective": objective.descriptor(), "gamma": gamma, "eta": eta,
        "steps": steps, "seeds": seeds, "batch_size": batch_size,
        "sampling": sampling, "w_init": w_init, "c_sigma": c_sigma,
    }
    return CompactDomainReport(
        L=L, gamma=gamma, eta=eta, c_sigma=c_sigma, c_ell=C_ELL, w=w,
        loss_bound=loss_bound, steps=steps, seeds=seeds,
        batch_size=batch_size, sampling=sampling, w_init=float(w_init),
        precondition_ok=precondition_ok, init_inside=init_inside,
        opnorm_tol=OPNORM_TOL, max_opnorm=max_opnorm,
        opnorm_violations=opnorm_violations,
        first_violation_step=first_violation, final_inside=final_inside,
        per_seed_max_opnorm=[float(v) for v in per_seed_max],
        max_abs_loss=max_abs_loss, loss_violations=loss_violations,
        max_abs_minibatch_loss=max_abs_mb, diverged=diverged,
        diverged_step=diverged_step, verdict=verdict, config=config,
        opnorm_series=opn_series, loss_series=loss_series)


# ---------------------------------------------------------------------------
# batch-norm bounds


@dataclass
class BnReport:
    """Hard boxes for a batch-normalized output layer: normalized
    features |xhat| <= sqrt(m) with zero tolerance, learned scale
    |a| <= 2 sqrt(m)/gamma up to accumulated rounding, and training
    loss |L_B| <= 4m/gamma + log d."""

    m: int
    gamma: float
    eta: float
    steps: int
    seeds: list[int]
    num_classes: int
    precondition_ok: bool
    xhat_bound: float
    max_abs_xhat: float
    xhat_violations: int
    scale_bound: float
    scale_tol: float
    max_abs_scale: float
    scale_violations: int
    loss_bound: float
    max_abs_loss: float
    loss_violations: int
    diverged: bool
    diverged_step: int | None
    verdict: str
    config: dict

    name = "bn"

    def to_dict(self) -> dict:
        return {
            "m": self.m, "gamma": self.gamma, "eta": self.eta,
            "steps": self.steps, "seeds": self.seeds,
            "num_classes": self.num_classes,
            "precondition_ok": self.precondition_ok,
            "xhat_bound": self.xhat_bound,
            "max_abs_xhat": self.max_abs_xhat,
            "xhat_violations": self.xhat_violations,
            "scale_bound": self.scale_bound, "scale_tol": self.scale_tol,
            "max_abs_scale": self.max_abs_scale,
            "scale_violations": self.scale_violations,
            "loss_bound": self.loss_bound, "max_abs_loss": self.max_abs_loss,
            "loss_violations": self.loss_violations,
            "diverged": self.diverged, "diverged_step": self.diverged_step,
            "verdict": self.verdict, "config": self.config,
        }

    def summary_line(self) -> str:
        word = _VERDICT_WORD[self.verdict]
        return (f"bn: {word}  max |xhat| {self.max_abs_xhat:.9g} vs "
                f"{self.xhat_bound:.9g}, max |a| {self.max_abs_scale:.9g} vs "
                f"{self.scale_bound:.9g}+{self.scale_tol:g}, max |L_B| "
                f"{self.max_abs_loss:.9g} vs {self.loss_bound:.9g}, "
                f"{self.xhat_violations + self.scale_violations + self.loss_violations}"
                f" violations over {self.steps} steps x {len(self.seeds)} seeds")


def check_bn_bounds(objective, gamma: float, eta: float, *, steps: int,
                    seed, batch_size: int, w_init: float = 1.0) -> BnReport:
    """Train a batch-normalized net and verify the three boxes.

    The normalized features satisfy |xhat| <= sqrt(m) identically in
    exact arithmetic (with the variance-floor epsilon the inequality is
    strict), so that bound is checked with zero tolerance at every
    training forward.  The scale coordinates stay in
    |a_k| <= 2 sqrt(m)/gamma because each per-step scale gradient is at
    most sqrt(m) in magnitude and weight decay contracts the rest; the
    box is checked with a 1e-10 rounding allowance at every iterate,
    and the scale is initialized uniformly inside it.  The minibatch
    loss is checked against 4m/gamma + log d.  eta > 1/gamma downgrades
    the verdict to not-applicable (negative-test mode).
    """
    if not isinstance(objective, BatchNormMlpObjective):
        raise PreconditionError(
            "bn check needs a network whose last layer is batch "
            f"normalization, got {type(objective).__name__}")
    if batch_size < 2:
        raise PreconditionError("batch statistics need batch_size >= 2")
    if gamma <= 0:
        raise PreconditionError("weight decay gamma must be positive")
    if eta <= 0:
        raise PreconditionError("step size eta must be positive")
    precondition_ok = eta <= 1.0 / gamma

    m = batch_size
    d = objective.widths[-1]
    xhat_bound = float(np.sqrt(m))
    scale_bound = 2.0 * np.sqrt(m) / gamma
    loss_bound = float(4.0 * m / gamma + np.log(d))

    seeds = _seed_list(seed)
    um = UpdateMap(objective, Schedule.constant(eta), gamma=gamma,
                   batch_size=m, sampling="iid", seed=seeds[0])
    samplers = [um.batch_sampler(s) for s in seeds]
    thetas = np.stack([np.asarray(objective.init_theta(
        um.init_rng(s), w_init=w_init, scale_bound=scale_bound))
        for s in seeds])

    off = sum(int(np.prod(s)) for s in objective.affine_shapes)
    scale_cap = scale_bound + SCALE_TOL

    def scale_stats(th):
        a = np.abs(th[:, off:off + d])
        return float(a.max()), int((a > scale_cap).sum())

    max_abs_scale, scale_violations = scale_stats(thetas)
    max_abs_xhat = 0.0
    xhat_violations = 0
    max_abs_loss = 0.0
    loss_violations = 0
    contraction = 1.0 - eta * gamma
    diverged = False
    diverged_step = None
    for step in range(steps):
        batches = np.stack([smp.next_batch() for smp in samplers])
        losses, grads = objective.loss_and_grad_many(thetas, batches)
        xhat = objective.xhat_many(thetas, batches)
        ax = float(np.abs(xhat).max())
        max_abs_xhat = max(max_abs_xhat, ax)
        xhat_violations += int((np.abs(xhat) > xhat_bound).sum())
        al = float(np.abs(losses).max())
        max_abs_loss = max(max_abs_loss, al)
        loss_violations += int((np.abs(losses) > loss_bound).sum())
        if not np.all(np.isfinite(grads)):
            diverged, diverged_step = True, step
            break
        thetas = contraction * thetas - eta * grads
        if not np.all(np.isfinite(thetas)):
            diverged, diverged_step = True, step
            break
        a_max, a_bad = scale_stats(thetas)
        max_abs_scale = max(max_abs_scale, a_max)
        scale_violations += a_bad

    if not precondition_ok:
        verdict = "not_applicable"
    elif diverged or xhat_violations or scale_violations or loss_violations:
        verdict = "fail"
    else:
        verdict = "pass"

    config = {
        "objective": objective.descriptor(), "gamma": gamma, "eta": eta,
        "steps": steps, "seeds": seeds, "batch_size": m, "w_init": w_init,
    }
    return BnReport(
        m=m, gamma=gamma, eta=eta, steps=steps, seeds=seeds, num_classes=d,
        precondition_ok=precondition_ok, xhat_bound=xhat_bound,
        max_abs_xhat=max_abs_xhat, xhat_violations=xhat_violations,
        scale_bound=float(scale_bound), scale_tol=SCALE_TOL,
        max_abs_scale=max_abs_scale, scale_violations=scale_violations,
        loss_bound=loss_bound, max_abs_loss=max_abs_loss,
        loss_violations=loss_violations, diverged=diverged,
        diverged_step=diverged_step, verdict=verdict, config=config)


# ---------------------------------------------------------------------------
# invariance detection and the smaller-step test


class InvarianceResult(NamedTuple):
    """Outcome of the loss-stabilization heuristic."""

    reached: bool
    step: int | None
    stat: float
    tol: float
    window: int


def detect_invariance(traj, objective, window: int = 200,
                      tol: float | None = None) -> InvarianceResult:
    """Heuristic detector for the stationary training regime.

    The full loss is evaluated at every stored iterate; the statistic
    of a window is the mean per-step loss change across it, which
    telescopes to (last - first) / window.  The regime counts as
    reached once three consecutive windows each have |statistic| <=
    tol, and ``step`` is where the first of those windows closes.  With
    tol=None each window uses 1% of its own loss interquartile range,
    an adaptive default that should be tightened when the loss scale is
    known.  This operationalizes "the measure is invariant", which is
    an assumption rather than a measurable event; treat the flag as a
    cutoff for burn-in, not as a certificate.
    """
    if window < 2:
        raise ValueError("window must span at least 2 steps")
    if traj.stride != 1:
        raise ValueError(
            "invariance detection needs every iterate; rerun with stride=1")
    losses = objective.loss_many(traj.iterates)
    num_windows = (len(losses) - 1) // window
    stat = np.nan
    used_tol = np.nan
    streak = 0
    for i in range(num_windows):
        lo, hi = i * window, (i + 1) * window
        stat = float((losses[hi] - losses[lo]) / window)
        if tol is None:
            q75, q25 = np.percentile(losses[lo:hi + 1], [75, 25])
            used_tol = 0.01 * float(q75 - q25)
        else:
            used_tol = float(tol)
        if abs(stat) <= used_tol:
            streak += 1
            if streak == 3:
                first = i - 2
                return InvarianceResult(True, (first + 1) * window,
                                        stat, used_tol, window)
        else:
            streak = 0
    return InvarianceResult(False, None, stat, used_tol, window)


@dataclass
class SmallerStepReport:
    """Monte-Carlo test of the expected one-step decrease at step size
    c * eta, averaged over an empirical measure with fresh minibatch
    noise."""

    eta: float
    gamma: float
    batch_size: int
    num_atoms: int
    grad_sq_mean: float
    eps_stat: float
    c_grid: list[float]
    samples: int
    estimates: list[float]
    stderrs: list[float]
    sign_pattern: str
    g_max: float | None
    m_hat: float | None
    largest_passing_c: float | None
    smallest_passing_c: float | None
    window: int | None
    tol: float | None
    seed: int
    verdict: str
    config: dict

    name = "smaller_step"

    def to_dict(self) -> dict:
        return {
            "eta": self.eta, "gamma": self.gamma,
            "batch_size": self.batch_size, "num_atoms": self.num_atoms,
            "grad_sq_mean": self.grad_sq_mean, "eps_stat": self.eps_stat,
            "c_grid": self.c_grid, "samples": self.samples,
            "estimates": self.estimates, "stderrs": self.stderrs,
            "sign_pattern": self.sign_pattern, "g_max": self.g_max,
            "m_hat_estimate": self.m_hat,
            "largest_passing_c": self.largest_passing_c,
            "smallest_passing_c": self.smallest_passing_c,
            "window": self.window, "tol": self.tol, "seed": self.seed,
            "verdict": self.verdict, "config": self.config,
        }

    def summary_line(self) -> str:
        word = _VERDICT_WORD[self.verdict]
        if self.verdict == "not_applicable":
            return (f"smaller_step: {word}  mean ||grad f||^2 "
                    f"{self.grad_sq_mean:.3g} <= {self.eps_stat:g}, measure "
                    f"is numerically supported on stationary points")
        best = ("none" if self.largest_passing_c is None
                else f"{self.largest_passing_c:g}")
        return (f"smaller_step: {word}  largest passing c = {best}, "
                f"sign pattern {self.sign_pattern}, "
                f"{self.samples} samples per c over {self.num_atoms} atoms")


def _difference_opnorm(reg, z, zp, rng, iters: int = 30) -> float:
    """Power-iteration estimate of || H(z) - H(z') ||_op for the
    regularized loss Hessians; a labeled estimate, never a bound."""
    v = rng.standard_normal(z.size)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        av = hvp(reg, z, v) - hvp(reg, zp, v)
        nrm = float(np.linalg.norm(av))
        if nrm == 0.0 or not np.isfinite(nrm):
            return 0.0
        lam = float(v @ av)
        v = av / nrm
    return abs(lam)


def check_smaller_step(measure: EmpiricalMeasure, update_map: UpdateMap, *,
                       c_grid=DEFAULT_C_GRID, samples: int = 200,
                       seed: int = 0, rng=None, eps_stat: float = EPS_STAT,
                       window: int | None = None, tol: float | None = None,
                       estimate_m_hat: bool = True) -> SmallerStepReport:
    """Estimate E[f(theta - c eta g(theta)) - f(theta)] per grid value c.

    theta is drawn from the measure's atoms, g is a fresh uniform
    minibatch gradient plus weight decay, and f is the full loss plus
    the (gamma/2)||theta||^2 term, so the probe step is exactly the
    training update at step size c * eta.  A value of c passes when its
    estimate is negative at two standard errors.  When the measure's
    mean squared full gradient is below eps_stat the measure is
    numerically supported on stationary points and the verdict is
    not-applicable.  The grid is descending so the predicted sign
    structure, a non-negative prefix followed by a negative suffix, is
    directly visible in ``sign_pattern``.

    ``window`` and ``tol`` are echoed into the report when the measure
    came out of :func:`detect_invariance`; they do not affect the test.
    m_hat is a sampled-pair proxy for the Hessian dispersion constant
    and is reported as an estimate only.
    """
    if measure.num_atoms < 10:
        raise PreconditionError(
            f"need at least 10 atoms to average over, got {measure.num_atoms}")
    if samples < 100:
        raise ValueError("each per-c estimate must average >= 100 samples")
    base = update_map.objective
    gamma = update_map.gamma
    eta = update_map.eta(0)
    reg = RegularizedObjective(base, gamma)
    if rng is None:
        rng = np.random.default_rng(
            np.random.SeedSequence([int(seed), _SMALLSTEP_STREAM]))

    atoms = measure.atoms
    weights = measure.weights
    f_atoms, g_atoms = reg.loss_and_grad_many(atoms)
    grad_sq_mean = float(weights @ np.einsum("kd,kd->k", g_atoms, g_atoms))

    config = {
        "update_map": update_map.descriptor(), "c_grid": list(c_grid),
        "samples": samples, "seed": int(seed), "eps_stat": eps_stat,
        "num_atoms": measure.num_atoms,
    }
    if grad_sq_mean <= eps_stat:
        return SmallerStepReport(
            eta=eta, gamma=gamma, batch_size=update_map.batch_size,
            num_atoms=measure.num_atoms, grad_sq_mean=grad_sq_mean,
            eps_stat=eps_stat, c_grid=[float(c) for c in c_grid],
            samples=samples, estimates=[], stderrs=[], sign_pattern="",
            g_max=None, m_hat=None, largest_passing_c=None,
            smallest_passing_c=None, window=window, tol=tol, seed=int(seed),
            verdict="not_applicable", config=config)

    n_ex = base.num_examples
    m = update_map.batch_size
    estimates, stderrs, passing = [], [], []
    g_max = 0.0
    for c in c_grid:
        idx = rng.choice(measure.num_atoms, size=samples, p=weights)
        batches = rng.integers(0, n_ex, size=(samples, m))
        th = atoms[idx]
        _, grads_b = base.loss_and_grad_many(th, batches)
        g = grads_b + gamma * th
        g_max = max(g_max, float(np.sqrt(
            np.einsum("kd,kd->k", g, g).max())))
        th1 = th - (c * eta) * g
        f1 = reg.loss_many(th1)
        diffs = f1 - f_atoms[idx]
        est = float(diffs.mean())
        se = float(diffs.std(ddof=1) / np.sqrt(samples))
        estimates.append(est)
        stderrs.append(se)
        if est + 2.0 * se < 0.0:
            passing.append(float(c))
    sign_pattern = "".join("-" if e < 0 else "+" for e in estimates)

    m_hat = None
    if estimate_m_hat and measure.num_atoms >= 2:
        pair_norms = []
        for _ in range(4):
            i = int(rng.integers(0, measure.num_atoms))
            j = int((i + 1 + rng.integers(0, measure.num_atoms - 1))
                    % measure.num_atoms)
            pair_norms.append(_difference_opnorm(reg, atoms[i], atoms[j], rng))
        m_hat = float(max(pair_norms) ** 2)

    return SmallerStepReport(
        eta=eta, gamma=gamma, batch_size=m, num_atoms=measure.num_atoms,
        grad_sq_mean=grad_sq_mean, eps_stat=eps_stat,
        c_grid=[float(c) for c in c_grid], samples=samples,
        estimates=estimates, stderrs=stderrs, sign_pattern=sign_pattern,
        g_max=g_max, m_hat=m_hat,
        largest_passing_c=max(passing) if passing else None,
        smallest_passing_c=min(passing) if passing else None,
        window=window, tol=tol, seed=int(seed),
        verdict="pass" if passing else "fail", config=config)


# ---------------------------------------------------------------------------
# cross-entropy lemma


@dataclass
class CeLemmaReport:
    """Property-test sweep of the bounded-logit cross-entropy facts."""

    dims: list[int]
    trials: int
    seed: int
    slack: float
    bound_violations: int
    grad_violations: int
    lipschitz_violations: int
    max_bound_excess: float
    max_grad_norm: float
    max_lipschitz_ratio: float
    verdict: str
    config: dict

    name = "ce_lemma"

    def to_dict(self) -> dict:
        return {
            "dims": self.dims, "trials": self.trials, "seed": self.seed,
            "slack": self.slack,
            "bound_violations": self.bound_violations,
            "grad_violations": self.grad_violations,
            "lipschitz_violations": self.lipschitz_violations,
            "max_bound_excess": self.max_bound_excess,
            "max_grad_norm": self.max_grad_norm,
            "max_lipschitz_ratio": self.max_lipschitz_ratio,
            "verdict": self.verdict, "config": self.config,
        }

    def summary_line(self) -> str:
        word = _VERDICT_WORD[self.verdict]
        total = (self.bound_violations + self.grad_violations
                 + self.lipschitz_violations)
        return (f"ce_lemma: {word}  {total} violations in {self.trials} "
                f"trials, max grad norm {self.max_grad_norm:.9g} vs "
                f"{C_ELL:.9g}, max Lipschitz ratio "
                f"{self.max_lipschitz_ratio:.9g} vs 1")


def check_ce_lemma(dims=(2, 10), trials: int = 10_000, *,
                   c_max: float = 20.0, seed: int = 0,
                   rng=None) -> CeLemmaReport:
    """Randomized sweep of three facts about the per-example loss.

    Per trial a class count is drawn from ``dims``, logits are drawn
    uniformly inside a random box of width c <= c_max around a random
    offset, and the label is uniform.  Checked with a 1e-12 rounding
    allowance: (a) |l| <= (max - min logit) + log d, (b) the analytic
    gradient has 2-norm <= sqrt(2), (c) |l(x) - l(x')| <= sqrt(2)
    ||x - x'|| on independent pairs sharing the label.
    """
    from .objectives.losses import label_log_prob

    if np.isscalar(dims):
        dims = (int(dims),)
    dims = tuple(int(d) for d in dims)
    if any(d < 2 for d in dims):
        raise PreconditionError("class count must be at least 2")
    if trials < 1:
        raise PreconditionError("need at least one trial")
    if rng is None:
        rng = np.random.default_rng(
            np.random.SeedSequence([int(seed), _CE_STREAM]))

    assignment = rng.integers(0, len(dims), size=trials)
    bound_viol = grad_viol = lip_viol = 0
    max_excess = -np.inf
    max_gnorm = 0.0
    max_ratio = 0.0
    for j in sorted(range(len(dims))):
        n = int((assignment == j).sum())
        if n == 0:
            continue
        d = dims[j]
        width = rng.uniform(0.0, c_max, size=(n, 1))
        offset = rng.normal(0.0, 10.0, size=(n, 1))
        x = offset + width * rng.uniform(0.0, 1.0, size=(n, d))
        y = rng.integers(0, d, size=n)
        values, grads = label_log_prob(x, y)

        cap = (x.max(axis=1) - x.min(axis=1)) + np.log(d)
        excess = np.abs(values) - cap
        bound_viol += int((excess > CE_SLACK).sum())
        max_excess = max(max_excess, float(excess.max()))

        gnorm = np.linalg.norm(grads, axis=1)
        grad_viol += int((gnorm > C_ELL + CE_SLACK).sum())
        max_gnorm = max(max_gnorm, float(gnorm.max()))

        width2 = rng.uniform(0.0, c_max, size=(n, 1))
        offset2 = rng.normal(0.0, 10.0, size=(n, 1))
        x2 = offset2 + width2 * rng.uniform(0.0, 1.0, size=(n, d))
        values2, _ = label_log_prob(x2, y)
        dist = np.linalg.norm(x - x2, axis=1)
        ok = dist > 0
        gap = np.abs(values - values2)
        lip_viol += int((gap[ok] > C_ELL * dist[ok] + CE_SLACK).sum())
        if ok.any():
            max_ratio = max(max_ratio,
                            float((gap[ok] / (C_ELL * dist[ok])).max()))

    config = {"dims": list(dims), "trials": trials, "c_max": c_max,
              "seed": int(seed)}
    verdict = ("pass" if bound_viol == grad_viol == lip_viol == 0
               else "fail")
    return CeLemmaReport(
        dims=list(dims), trials=trials, seed=int(seed), slack=CE_SLACK,
        bound_violations=bound_viol, grad_violations=grad_viol,
        lipschitz_violations=lip_viol, max_bound_excess=float(max_excess),
        max_grad_norm=max_gnorm, max_lipschitz_ratio=max_ratio,
        verdict=verdict, config=config)
