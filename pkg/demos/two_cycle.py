"""The one case solvable with pencil and paper: eta * lambda = 2.

On the quadratic 0.5 * lambda * theta^2 with eta = 2 / lambda, gradient
descent maps theta to -theta, so every start lands on an exact period-2
orbit.  The two-atom measure on {theta0, -theta0} is invariant, the loss
never changes, and each diagnostic has a closed-form value to compare
against.
"""

import numpy as np

from ergodyn import (EmpiricalMeasure, Quadratic, Schedule, UpdateMap,
                     check_smaller_step, diagnose, invariance_residual,
                     loss_observable, run_trajectory)


def main():
    lam = 2.0
    obj = Quadratic([lam])
    um = UpdateMap(obj, Schedule.constant(2.0 / lam), gamma=0.0,
                   batch_size=1, sampling="iid", seed=0)
    traj = run_trajectory(um, theta0=np.array([0.7]), num_steps=13, stride=1)

    print("step  theta      loss")
    for k in (0, 1, 2, 3, 12):
        print(f"{k:<5d} {traj.iterates[k, 0]:+.4f}    {traj.losses[k]:.4f}")
    flips = 0.7 * (-1.0) ** np.arange(14)
    print(f"orbit equals 0.7 * (-1)^k exactly: {(traj.iterates[:, 0] == flips).all()}")
    print(f"largest per-step loss change: {np.abs(np.diff(traj.losses)).max()}")
    print()

    records = diagnose(traj, obj, compute_sharpness=True)
    ratios = {r.eos_ratio for r in records}
    print(f"eos_ratio at every recorded step: {sorted(ratios)}")
    print("closed form: |grad|^2 / (eta * sharpness * E|g|^2) = 1/eta/lam = 0.5")
    print()

    measure = EmpiricalMeasure(np.array([[0.7], [-0.7]]))
    residual, stderr = invariance_residual(measure, um, loss_observable(obj))
    print(f"invariance residual of the two-atom measure: {residual} "
          f"(stderr {stderr})")

    # Shrinking the step by c changes theta to (1 - 2c) * theta, so the
    # expected loss change is ((1 - 2c)^2 - 1) * loss, negative for all
    # 0 < c < 1.  The checker recovers that without knowing the formula.
    rep = check_smaller_step(
        EmpiricalMeasure(0.7 * (-1.0) ** np.arange(10)[:, None]), um,
        samples=200, seed=0)
    loss0 = obj.loss_many(np.array([[0.7]]))[0]
    print()
    print("c      measured       closed form")
    for c, est in zip(rep.c_grid, rep.estimates):
        exact = ((1 - 2 * c) ** 2 - 1) * loss0
        print(f"{c:<6g} {est:+.6f}     {exact:+.6f}")
    print(f"verdict: {rep.verdict}")


if __name__ == "__main__":
    main()
