"""SGD as an iterated map on parameter space.

One training step with step size eta, weight decay gamma and minibatch B is

    theta' = (1 - eta * gamma) * theta - eta * grad L_B(theta),

applied in exactly this contraction form: when eta * gamma = 1 the decay
term vanishes bit-exactly, which the bound checkers rely on.  A map with
a fixed batch sequence is deterministic; minibatch sampling makes it a
Markov chain, and everything downstream (measures, invariance statistics)
views training that way.

Seeding contract: all randomness of a run derives from one integer seed
through named SeedSequence streams (init, batches).  The same seed gives
the same batch sequence in both the single-run and the stacked multi-seed
runner, so the two paths sample identical chains.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .objectives.base import Objective
from .params import ParamVector, as_values

__all__ = [
    "Schedule", "schedule_eta", "UpdateMap", "Trajectory", "sgd_step",
    "run_trajectory", "run_trajectories", "save_trajectory", "load_trajectory",
    "NonFiniteGradient", "DIVERGENCE_NORM", "TRAJECTORY_MAGIC",
]

DIVERGENCE_NORM = 1e12
TRAJECTORY_MAGIC = b"ERGDYN01"

_INIT_STREAM = 0x1417
_BATCH_STREAM = 0xBA7C


class NonFiniteGradient(ValueError):
    """A gradient evaluation produced nan or inf."""


@dataclass(frozen=True)
class Schedule:
    """Step-size schedule.  kinds: constant, stage_decay, cosine."""

    eta0: float
    kind: str = "constant"
    factor: float = 1.0          # stage_decay: multiplier applied every period
    period_epochs: int = 1       # stage_decay: epochs between decays
    total_steps: int = 0         # cosine: half-period in steps

    def __post_init__(self):
        if self.eta0 <= 0:
            raise ValueError("eta0 must be positive")
        if self.kind not in ("constant", "stage_decay", "cosine"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.kind == "stage_decay":
            if not (0 < self.factor <= 1):
                raise ValueError("stage decay factor must be in (0, 1]")
            if self.period_epochs < 1:
                raise ValueError("decay period must be at least one epoch")
        if self.kind == "cosine" and self.total_steps < 1:
            raise ValueError("cosine schedule needs total_steps >= 1")

    @staticmethod
    def constant(eta0: float) -> "Schedule":
        return Schedule(eta0=eta0, kind="constant")

    @staticmethod
    def stage_decay(eta0: float, factor: float, period_epochs: int) -> "Schedule":
        return Schedule(eta0=eta0, kind="stage_decay", factor=factor,
                        period_epochs=period_epochs)

    @staticmethod
    def cosine(eta0: float, total_steps: int) -> "Schedule":
        return Schedule(eta0=eta0, kind="cosine", total_steps=total_steps)

    def value(self, step: int, steps_per_epoch: int = 1) -> float:
        if step < 0:
            raise ValueError("step must be >= 0")
        if self.kind == "constant":
            return self.eta0
        if self.kind == "stage_decay":
            epoch = step // max(1, steps_per_epoch)
            return self.eta0 * self.factor ** (epoch // self.period_epochs)
        t = min(step, self.total_steps)
        return self.eta0 * (1.0 + np.cos(np.pi * t / self.total_steps)) / 2.0

    def descriptor(self) -> dict:
        d = {"kind": self.kind, "eta0": self.eta0}
        if self.kind == "stage_decay":
            d["factor"] = self.factor
            d["period_epochs"] = self.period_epochs
        elif self.kind == "cosine":
            d["total_steps"] = self.total_steps
        return d

    @staticmethod
    def from_descriptor(d: dict) -> "Schedule":
        kind = d["kind"]
        if kind == "constant":
            return Schedule.constant(d["eta0"])
        if kind == "stage_decay":
            return Schedule.stage_decay(d["eta0"], d["factor"], d["period_epochs"])
        if kind == "cosine":
            return Schedule.cosine(d["eta0"], d["total_steps"])
        raise ValueError(f"unknown schedule kind {kind!r}")


def schedule_eta(schedule: Schedule, step: int, steps_per_epoch: int = 1) -> float:
    return schedule.value(step, steps_per_epoch)


class _BatchSampler:
    """Per-step minibatch draws; both runners use this exact stream.

    iid: every step draws batch_size indices uniformly with replacement.
    epoch_shuffle: a fresh permutation each epoch, consumed in chunks; the
    last chunk of an epoch is smaller when batch_size does not divide N,
    so each example appears exactly once per epoch.
    """

    def __init__(self, num_examples: int, batch_size: int, sampling: str,
                 rng: np.random.Generator):
        if sampling not in ("iid", "epoch_shuffle"):
            raise ValueError(f"unknown sampling mode {sampling!r}")
        if batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if sampling == "epoch_shuffle" and batch_size > num_examples:
            raise ValueError("epoch shuffle needs batch_size <= num_examples")
        self.n = num_examples
        self.m = batch_size
        self.sampling = sampling
        self.rng = rng
        self._perm = None
        self._pos = 0

    def next_batch(self) -> np.ndarray:
        if self.sampling == "iid":
            return self.rng.integers(0, self.n, size=self.m)
        if self._perm is None or self._pos >= self.n:
            self._perm = self.rng.permutation(self.n)
            self._pos = 0
        batch = self._perm[self._pos:self._pos + self.m]
        self._pos += self.m
        return batch


@dataclass
class UpdateMap:
    """The training map: base objective, step-size schedule, weight decay,
    minibatch sampling.  Identical seed means identical batch sequence."""

    objective: Objective
    schedule: Schedule
    gamma: float = 0.0
    batch_size: int = 1
    sampling: str = "iid"
    seed: int = 0

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if isinstance(self.schedule, (int, float)):
            self.schedule = Schedule.constant(float(self.schedule))
        if self.sampling not in ("iid", "epoch_shuffle"):
            raise ValueError(f"unknown sampling mode {self.sampling!r}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if (self.sampling == "epoch_shuffle"
                and self.batch_size > self.objective.num_examples):
            raise ValueError("epoch shuffle needs batch_size <= num_examples")
        self.seed = int(self.seed)

    @property
    def steps_per_epoch(self) -> int:
        n, m = self.objective.num_examples, self.batch_size
        return max(1, -(-n // m))

    @property
    def is_deterministic(self) -> bool:
        """True when every step sees a gradient of the full example set,
        so the map has no sampling noise at all."""
        n = self.objective.num_examples
        return n == 1 or (self.sampling == "epoch_shuffle" and self.batch_size == n)

    def eta(self, step: int) -> float:
        return self.schedule.value(step, self.steps_per_epoch)

    def init_rng(self, seed=None) -> np.random.Generator:
        s = self.seed if seed is None else int(seed)
        return np.random.default_rng(np.random.SeedSequence([s, _INIT_STREAM]))

    def batch_sampler(self, seed=None) -> _BatchSampler:
        s = self.seed if seed is None else int(seed)
        rng = np.random.default_rng(np.random.SeedSequence([s, _BATCH_STREAM]))
        return _BatchSampler(self.objective.num_examples, self.batch_size,
                             self.sampling, rng)

    def init_theta(self, seed=None, **kw) -> ParamVector:
        return self.objective.init_theta(self.init_rng(seed), **kw)

    def apply(self, theta, step: int = 0, sampler: _BatchSampler | None = None):
        """One update from the given step index.  Without a sampler a fresh
        one is created, so repeated calls at step 0 reproduce the first
        training step exactly."""
        if sampler is None:
            sampler = self.batch_sampler()
        batch = sampler.next_batch()
        eta = self.eta(step)
        theta_next, loss = sgd_step(self.objective, theta, eta, self.gamma, batch)
        return theta_next, loss, batch, eta

    def descriptor(self) -> dict:
        return {
            "objective": self.objective.descriptor(),
            "schedule": self.schedule.descriptor(),
            "gamma": self.gamma,
            "batch_size": self.batch_size,
            "sampling": self.sampling,
            "seed": self.seed,
        }


def sgd_step(objective: Objective, theta, eta: float, gamma: float, batch):
    """theta' = (1 - eta*gamma) * theta - eta * grad L_B(theta).

    Returns (theta', minibatch loss at theta).  A non-finite gradient
    aborts the step with NonFiniteGradient.
    """
    v = as_values(theta)
    loss, grad = objective.loss_and_grad(v, batch)
    if not np.all(np.isfinite(grad)):
        raise NonFiniteGradient("gradient has non-finite entries")
    return (1.0 - eta * gamma) * v - eta * grad, float(loss)


@dataclass
class Trajectory:
    """A finished run: strided iterates plus one record per step.

    iterates[k] is the parameter vector at step iterate_steps[k]; step 0
    (the initialization) and the final iterate are always stored.  For
    every step t the records hold the step size, the minibatch indices,
    and the minibatch loss evaluated at the pre-update iterate.
    """

    iterates: np.ndarray                 # (K, dim)
    iterate_steps: np.ndarray            # (K,)
    etas: np.ndarray                     # (n,)
    losses: np.ndarray                   # (n,)
    batches: list                        # n integer index arrays
    seed: int
    stride: int
    gamma: float
    sampling: str
    batch_size: int
    steps_per_epoch: int
    schedule: Schedule
    objective_info: dict = field(default_factory=dict)
    diverged: bool = False
    divergence_reason: str | None = None

    def __post_init__(self):
        n = len(self.losses)
        if not (len(self.etas) == len(self.batches) == n):
            raise ValueError("per-step records are inconsistent")
        if self.iterates.shape[0] != self.iterate_steps.shape[0]:
            raise ValueError("iterates and iterate_steps disagree")

    @property
    def num_steps(self) -> int:
        return len(self.losses)

    @property
    def dim(self) -> int:
        return self.iterates.shape[1]

    def iterate_at(self, step: int) -> np.ndarray:
        """The stored parameter vector at an exact step index."""
        hits = np.nonzero(self.iterate_steps == step)[0]
        if hits.size == 0:
            raise KeyError(
                f"step {step} not stored (stride {self.stride}); "
                f"stored steps run {self.iterate_steps[0]}..{self.iterate_steps[-1]}"
            )
        return self.iterates[hits[0]]

    def final_theta(self) -> np.ndarray:
        return self.iterates[-1]


def _stored_steps(num_steps: int, stride: int) -> np.ndarray:
    steps = list(range(0, num_steps + 1, stride))
    if steps[-1] != num_steps:
        steps.append(num_steps)
    return np.asarray(steps, dtype=np.int64)


def run_trajectory(update_map: UpdateMap, theta0=None, num_steps: int = 1,
                   stride: int = 1, init_kwargs: dict | None = None) -> Trajectory:
    """Iterate the map for num_steps from theta0 (or a seeded init).

    The run stops early if the iterate norm exceeds DIVERGENCE_NORM or a
    gradient turns non-finite; the trajectory is then truncated and
    flagged rather than discarded.
    """
    if num_steps < 1:
        raise ValueError("num_steps must be >= 1")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if theta0 is None:
        theta0 = update_map.init_theta(**(init_kwargs or {}))
    theta = as_values(theta0).copy()
    sampler = update_map.batch_sampler()
    stored = [theta.copy()]
    stored_steps = [0]
    etas, losses, batches = [], [], []
    diverged = False
    reason = None
    for t in range(num_steps):
        eta = update_map.eta(t)
        batch = sampler.next_batch()
        try:
            theta, loss = sgd_step(update_map.objective, theta, eta,
                                   update_map.gamma, batch)
        except NonFiniteGradient:
            diverged, reason = True, "nonfinite_grad"
            break
        etas.append(eta)
        losses.append(loss)
        batches.append(batch)
        done = t + 1
        if done % stride == 0 or done == num_steps:
            stored.append(theta.copy())
            stored_steps.append(done)
        if np.linalg.norm(theta) > DIVERGENCE_NORM:
            diverged, reason = True, "norm"
            if stored_steps[-1] != done:
                stored.append(theta.copy())
                stored_steps.append(done)
            break
    return Trajectory(
        iterates=np.asarray(stored),
        iterate_steps=np.asarray(stored_steps, dtype=np.int64),
        etas=np.asarray(etas), losses=np.asarray(losses), batches=batches,
        seed=update_map.seed, stride=stride, gamma=update_map.gamma,
        sampling=update_map.sampling, batch_size=update_map.batch_size,
        steps_per_epoch=update_map.steps_per_epoch,
        schedule=update_map.schedule,
        objective_info=update_map.objective.descriptor(),
        diverged=diverged, divergence_reason=reason,
    )


def run_trajectories(update_map: UpdateMap, seeds, theta0s=None,
                     num_steps: int = 1, stride: int = 1, store_from: int = 0,
                     init_kwargs: dict | None = None) -> list[Trajectory]:
    """Run one chain per seed, stepping all of them together.

    Each seed gets the same named RNG streams it would get alone, so the
    batch sequences match the single-run path draw for draw.  Iterates
    are stored at stride multiples from step store_from on (plus the
    final iterate); records cover every step.  A diverged chain is frozen
    and truncated in its own trajectory without disturbing the others.
    """
    seeds = [int(s) for s in seeds]
    if num_steps < 1:
        raise ValueError("num_steps must be >= 1")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    obj = update_map.objective
    S = len(seeds)
    if theta0s is None:
        theta0s = np.stack([
            as_values(obj.init_theta(update_map.init_rng(s), **(init_kwargs or {})))
            for s in seeds
        ])
    else:
        theta0s = np.asarray(theta0s, dtype=np.float64)
        if theta0s.shape != (S, obj.dim):
            raise ValueError(f"theta0s must be ({S}, {obj.dim}), got {theta0s.shape}")
    samplers = [update_map.batch_sampler(s) for s in seeds]
    thetas = theta0s.copy()
    active = np.ones(S, dtype=bool)
    end_step = np.full(S, num_steps, dtype=np.int64)
    reasons: list[str | None] = [None] * S

    store_set = set(t for t in _stored_steps(num_steps, stride) if t >= store_from)
    kept: dict[int, np.ndarray] = {}
    if 0 in store_set:
        kept[0] = thetas.copy()

    etas = np.empty(num_steps)
    losses = np.full((S, num_steps), np.nan)
    batch_rows = []
    for t in range(num_steps):
        eta = update_map.eta(t)
        etas[t] = eta
        batch = np.stack([smp.next_batch() for smp in samplers])
        batch_rows.append(batch.astype(np.int32, copy=False))
        safe = np.where(active[:, None], thetas, 0.0)
        step_losses, grads = obj.loss_and_grad_many(safe, batch)
        bad = ~np.all(np.isfinite(grads), axis=1)
        newly_bad = bad & active
        if newly_bad.any():
            # these freeze at the pre-update iterate; snapshot it
            if t not in kept:
                kept[t] = thetas.copy()
            for s in np.nonzero(newly_bad)[0]:
                active[s] = False
                end_step[s] = t
                reasons[s] = "nonfinite_grad"
        upd = (1.0 - eta * update_map.gamma) * thetas - eta * np.where(
            np.isfinite(grads), grads, 0.0)
        thetas = np.where(active[:, None], upd, thetas)
        losses[active, t] = step_losses[active]
        blown = (np.linalg.norm(thetas, axis=1) > DIVERGENCE_NORM) & active
        if blown.any():
            for s in np.nonzero(blown)[0]:
                active[s] = False
                end_step[s] = t + 1
                reasons[s] = "norm"
        done = t + 1
        if done in store_set or blown.any() or not active.any():
            kept[done] = thetas.copy()
        if not active.any():
            break

    out = []
    for i, seed in enumerate(seeds):
        n_i = int(end_step[i])
        steps_i = sorted(s for s in kept if s <= n_i and (s in store_set or s == 0))
        if n_i not in steps_i and n_i in kept:
            steps_i.append(n_i)
        if not steps_i or steps_i[0] != 0:
            steps_i = [0] + steps_i
        iters = np.stack([theta0s[i] if s == 0 else kept[s][i] for s in steps_i])
        out.append(Trajectory(
            iterates=iters,
            iterate_steps=np.asarray(steps_i, dtype=np.int64),
            etas=etas[:n_i].copy(),
            losses=losses[i, :n_i].copy(),
            batches=[batch_rows[t][i] for t in range(n_i)],
            seed=seed, stride=stride, gamma=update_map.gamma,
            sampling=update_map.sampling, batch_size=update_map.batch_size,
            steps_per_epoch=update_map.steps_per_epoch,
            schedule=update_map.schedule,
            objective_info=obj.descriptor(),
            diverged=reasons[i] is not None,
            divergence_reason=reasons[i],
        ))
    return out


# -- persistence ---------------------------------------------------------


def save_trajectory(traj: Trajectory, out_dir) -> None:
    """Write metadata.json, iterates.bin and records.csv into out_dir.

    iterates.bin is the 8-byte magic ERGDYN01 followed by the (K, dim)
    iterate matrix as little-endian float64, row major.  Identical runs
    produce identical bytes; nothing time- or host-dependent is written.
    """
    os.makedirs(out_dir, exist_ok=True)
    meta = {
        "format": {"magic": TRAJECTORY_MAGIC.decode("ascii"), "dtype": "<f8"},
        "dim": int(traj.dim),
        "num_steps": int(traj.num_steps),
        "num_iterates": int(traj.iterates.shape[0]),
        "iterate_steps": [int(s) for s in traj.iterate_steps],
        "stride": int(traj.stride),
        "seed": int(traj.seed),
        "gamma": float(traj.gamma),
        "sampling": traj.sampling,
        "batch_size": int(traj.batch_size),
        "steps_per_epoch": int(traj.steps_per_epoch),
        "schedule": traj.schedule.descriptor(),
        "objective": traj.objective_info,
        "diverged": bool(traj.diverged),
        "divergence_reason": traj.divergence_reason,
    }
    with open(os.path.join(out_dir, "metadata.json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(out_dir, "iterates.bin"), "wb") as fh:
        fh.write(TRAJECTORY_MAGIC)
        fh.write(np.ascontiguousarray(traj.iterates, dtype="<f8").tobytes())
    with open(os.path.join(out_dir, "records.csv"), "w") as fh:
        fh.write("step,eta,batch_indices,loss\n")
        for t in range(traj.num_steps):
            idx = ";".join(str(int(j)) for j in traj.batches[t])
            fh.write(f"{t},{traj.etas[t]:.17g},{idx},{traj.losses[t]:.17g}\n")


def load_trajectory(run_dir) -> Trajectory:
    with open(os.path.join(run_dir, "metadata.json")) as fh:
        meta = json.load(fh)
    magic = meta.get("format", {}).get("magic", "")
    with open(os.path.join(run_dir, "iterates.bin"), "rb") as fh:
        head = fh.read(len(TRAJECTORY_MAGIC))
        if head != TRAJECTORY_MAGIC or magic != TRAJECTORY_MAGIC.decode("ascii"):
            raise ValueError(
                f"{run_dir}: not a trajectory file (magic {head!r})"
            )
        raw = fh.read()
    dim = int(meta["dim"])
    flat = np.frombuffer(raw, dtype="<f8")
    if flat.size != meta["num_iterates"] * dim:
        raise ValueError(f"{run_dir}: iterate payload has {flat.size} values, "
                         f"expected {meta['num_iterates'] * dim}")
    iterates = flat.reshape(meta["num_iterates"], dim).astype(np.float64)
    etas, losses, batches = [], [], []
    with open(os.path.join(run_dir, "records.csv")) as fh:
        header = fh.readline().strip()
        if header != "step,eta,batch_indices,loss":
            raise ValueError(f"{run_dir}: unexpected records header {header!r}")
        for line in fh:
            _, eta, idx, loss = line.rstrip("\n").split(",")
            etas.append(float(eta))
            losses.append(float(loss))
            batches.append(np.array([int(v) for v in idx.split(";")], dtype=np.int64))
    return Trajectory(
        iterates=iterates,
        iterate_steps=np.asarray(meta["iterate_steps"], dtype=np.int64),
        etas=np.asarray(etas), losses=np.asarray(losses), batches=batches,
        seed=int(meta["seed"]), stride=int(meta["stride"]),
        gamma=float(meta["gamma"]), sampling=meta["sampling"],
        batch_size=int(meta["batch_size"]),
        steps_per_epoch=int(meta["steps_per_epoch"]),
        schedule=Schedule.from_descriptor(meta["schedule"]),
        objective_info=meta["objective"],
        diverged=bool(meta["diverged"]),
        divergence_reason=meta["divergence_reason"],
    )
