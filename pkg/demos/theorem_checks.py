"""Run every built-in theorem checker once and print the margins.

Each checker instantiates its statement's preconditions, runs the
implied experiment, and reports pass, fail, or not-applicable together
with the measured margins.  Scales here are trimmed so the whole script
finishes in well under a minute.
"""

from ergodyn import (BatchNormMlpObjective, MlpObjective, MlpSpec, Schedule,
                     SinProduct, UpdateMap, build_measure, check_bn_bounds,
                     check_ce_lemma, check_compact_domain, check_smaller_step,
                     detect_invariance, make_blobs, run_trajectory)


def main():
    # Weight-decay keeps every layer's operator norm inside a ball.
    relu = MlpObjective(
        MlpSpec((2, 8, 8, 4), ("relu", "relu", "identity")),
        make_blobs(4, 2, 32, seed=5))
    rep = check_compact_domain(relu, gamma=1.0, eta=1.0, steps=20_000,
                               seed=[0, 1, 2], batch_size=8)
    print(rep.summary_line())

    # Batch normalization bounds features and the trained scales.
    bn = BatchNormMlpObjective((2, 8, 4), ("tanh", "identity"),
                               make_blobs(4, 2, 32, seed=6))
    rep = check_bn_bounds(bn, gamma=1.0, eta=0.5, steps=5_000,
                          seed=[0, 1, 2], batch_size=4)
    print(rep.summary_line())

    # Cross-entropy is bounded, has gradient norm at most sqrt(2),
    # and is Lipschitz; all three checked on random logits.
    print(check_ce_lemma(dims=(2, 10), trials=5_000, seed=0).summary_line())

    # Off a stationary point, shrinking the step by a factor c < 1
    # decreases the expected loss under the oscillation's own measure.
    um = UpdateMap(SinProduct(100.0), Schedule.constant(0.04), gamma=0.0,
                   batch_size=1, sampling="iid", seed=0)
    traj = run_trajectory(um, num_steps=2000, stride=1)
    found = detect_invariance(traj, um.objective, window=200)
    burn = found.step if found.reached else 1000
    measure = build_measure(traj, burn_in=burn)
    rep = check_smaller_step(measure, um, samples=200, seed=0,
                             estimate_m_hat=False)
    print(rep.summary_line())
    print()
    print(f"invariance detected at step {burn}, "
          f"measure holds {measure.num_atoms} iterates")
    print("per-c one-step loss change estimates (negative is descent):")
    for c, est, se in zip(rep.c_grid, rep.estimates, rep.stderrs):
        print(f"  c = {c:<5g} {est:+.4f} +- {2 * se:.4f}")


if __name__ == "__main__":
    main()
