"""How fast time averages converge when SGD itself never does.

One small MLP trained at a step size far above the descent regime.  The
loss oscillates without settling, but Delta_n, the change in a running
average caused by one extra fresh SGD step, decays toward zero inside a
Hoeffding envelope.  Time averages converge; iterates do not have to.
"""

import warnings

from ergodyn import (MlpObjective, MlpSpec, Schedule, UpdateMap,
                     coordinate_observable, make_blobs, run_trajectory,
                     vanishing_change)


def main():
    data = make_blobs(4, 2, 128, seed=7)
    spec = MlpSpec((2, 16, 16, 4), ("tanh", "tanh", "identity"))
    um = UpdateMap(MlpObjective(spec, data), Schedule.constant(0.5),
                   gamma=0.01, batch_size=16, sampling="iid", seed=0)
    traj = run_trajectory(um, num_steps=10_000, stride=1)

    losses = traj.losses
    print(f"loss at step 100:  {losses[100]:.4f}")
    print(f"loss at step 9900: {losses[9900]:.4f}")
    print(f"loss std over the last 2000 steps: {losses[-2000:].std():.4f}")
    print("the run is oscillatory, not converging")
    print()

    # Observable: the first weight coordinate.  It has no a-priori bound,
    # so the envelope falls back to twice the observed range (warned).
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        rep = vanishing_change(traj, um, coordinate_observable(0),
                               delta=0.1, n_grid=(100, 1000, 10_000))

    print("n        |Delta_n|   envelope    inside")
    for n, d, env, ok in zip(rep.n_grid, rep.delta_n, rep.envelope,
                             rep.contained):
        print(f"{n:<8d} {abs(d):<11.3e} {env:<11.3e} {bool(ok)}")
    print(f"fitted log-log slope: {rep.slope:.2f}")
    print("a Monte Carlo average of a stationary sequence decays at -0.5")


if __name__ == "__main__":
    main()
