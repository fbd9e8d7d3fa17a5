"""Tests for the guarantee checkers.

Each checker is exercised on a configuration where the verdict is
forced by construction: a tiny decayed net for the compact-domain and
batch-norm boxes, a scalar quadratic whose one-step loss change is
known in closed form for the smaller-step test, and fixed-point or
geometric-decay trajectories for the invariance detector.  Precondition
rejection and negative-test (not-applicable) modes are checked
explicitly, as is byte determinism of the serialized reports.
"""

import json

import numpy as np
import pytest

from ergodyn import (
    BatchNormMlpObjective,
    EmpiricalMeasure,
    MlpObjective,
    MlpSpec,
    PreconditionError,
    Quadratic,
    Schedule,
    SinProduct,
    UpdateMap,
    check_bn_bounds,
    check_ce_lemma,
    check_compact_domain,
    check_smaller_step,
    detect_invariance,
    make_blobs,
    run_trajectory,
    write_report,
)
from ergodyn.params import unpack_many
from ergodyn.theorems import C_ELL


def tiny_mlp(seed=1):
    data = make_blobs(3, 2, 8, seed=seed)
    spec = MlpSpec((2, 4, 4, 3), ("relu", "relu", "identity"))
    return MlpObjective(spec, data)


# ---------------------------------------------------------------------------
# compact-domain containment


def test_compact_domain_pass_and_bounds():
    obj = tiny_mlp()
    rep = check_compact_domain(obj, gamma=1.0, eta=1.0, steps=200,
                               seed=[0, 1], batch_size=2)
    assert rep.verdict == "pass"
    assert rep.precondition_ok and rep.init_inside and rep.final_inside
    assert rep.L == 3
    # L = 3 makes both exponents trivial: w = gamma / (c_ell c_sigma^3).
    assert rep.w == pytest.approx(1.0 / np.sqrt(2.0), rel=1e-15)
    assert rep.loss_bound == pytest.approx(
        np.log(3.0) + (1.0 / np.sqrt(2.0)) ** 3, rel=1e-15)
    assert rep.opnorm_violations == 0 and rep.loss_violations == 0
    assert rep.first_violation_step is None
    assert rep.max_opnorm <= rep.w + rep.opnorm_tol
    assert rep.max_abs_loss <= rep.loss_bound
    assert len(rep.per_seed_max_opnorm) == 2
    assert max(rep.per_seed_max_opnorm) == pytest.approx(rep.max_opnorm)
    assert not rep.diverged
    assert rep.summary_line().startswith("compact_domain: PASS")


def test_compact_domain_matches_run_trajectory():
    # The vectorized seed sweep must follow the exact same orbit as a
    # plain run_trajectory with the same seed (init and batch draws).
    obj = tiny_mlp(seed=4)
    gamma, eta, steps = 1.0, 0.8, 60
    rep = check_compact_domain(obj, gamma=gamma, eta=eta, steps=steps,
                               seed=7, batch_size=3, store_series=True)
    um = UpdateMap(obj, Schedule.constant(eta), gamma=gamma, batch_size=3,
                   sampling="iid", seed=7)
    traj = run_trajectory(um, num_steps=steps, stride=1,
                          init_kwargs={"w_init": rep.w})
    blocks = unpack_many(obj.shapes, traj.iterates)
    opn = np.stack([np.linalg.svd(b, compute_uv=False)[..., 0]
                    for b in blocks], axis=1)
    # Stacked and single-theta forward passes may differ in the last
    # bits (different BLAS kernels), so compare tightly but not exactly.
    np.testing.assert_allclose(rep.opnorm_series, opn.max(axis=1),
                               rtol=1e-12, atol=1e-15)
    assert rep.opnorm_series.shape == (steps + 1,)


def test_compact_domain_negative_modes():
    obj = tiny_mlp()
    rep = check_compact_domain(obj, gamma=1.0, eta=1.5, steps=5, seed=0,
                               batch_size=2)
    assert not rep.precondition_ok
    assert rep.verdict == "not_applicable"
    assert "N-A" in rep.summary_line()

    rep = check_compact_domain(obj, gamma=1.0, eta=1.0, steps=5, seed=0,
                               batch_size=2, w_init=10.0)
    assert not rep.init_inside
    assert rep.verdict == "not_applicable"


def test_compact_domain_preconditions():
    obj = tiny_mlp()
    with pytest.raises(PreconditionError, match="weight matrix"):
        check_compact_domain(SinProduct(), gamma=1.0, eta=1.0, steps=1,
                             seed=0)
    shallow = MlpObjective(MlpSpec((2, 3), ("identity",)),
                           make_blobs(3, 2, 8, seed=1))
    with pytest.raises(PreconditionError, match="L=3"):
        check_compact_domain(shallow, gamma=1.0, eta=1.0, steps=1, seed=0)
    with pytest.raises(PreconditionError, match="gamma"):
        check_compact_domain(obj, gamma=0.0, eta=1.0, steps=1, seed=0)
    with pytest.raises(PreconditionError, match="eta"):
        check_compact_domain(obj, gamma=1.0, eta=0.0, steps=1, seed=0)
    with pytest.raises(PreconditionError, match="Lipschitz"):
        check_compact_domain(obj, gamma=1.0, eta=1.0, steps=1, seed=0,
                             c_sigma=0.0)
    with pytest.raises(PreconditionError, match="divide"):
        check_compact_domain(obj, gamma=1.0, eta=1.0, steps=1, seed=0,
                             batch_size=5, sampling="epoch_shuffle")


# ---------------------------------------------------------------------------
# batch-norm boxes


def bn_objective(seed=2):
    data = make_blobs(3, 2, 8, seed=seed)
    return BatchNormMlpObjective((2, 4, 3), ("tanh", "identity"), data)


def test_bn_pass_and_bounds():
    rep = check_bn_bounds(bn_objective(), gamma=1.0, eta=0.5, steps=300,
                          seed=[0, 1], batch_size=4)
    assert rep.verdict == "pass"
    assert rep.xhat_bound == pytest.approx(2.0)
    assert rep.scale_bound == pytest.approx(4.0)
    assert rep.loss_bound == pytest.approx(16.0 + np.log(3.0))
    assert rep.max_abs_xhat <= rep.xhat_bound
    assert rep.max_abs_scale <= rep.scale_bound + rep.scale_tol
    assert rep.xhat_violations == 0
    assert rep.scale_violations == 0
    assert rep.loss_violations == 0
    assert rep.num_classes == 3
    assert rep.summary_line().startswith("bn: PASS")


def test_bn_xhat_bound_tracks_batch_size():
    rep = check_bn_bounds(bn_objective(), gamma=1.0, eta=0.5, steps=5,
                          seed=0, batch_size=9)
    assert rep.xhat_bound == pytest.approx(3.0)
    assert rep.scale_bound == pytest.approx(6.0)


def test_bn_negative_and_preconditions():
    rep = check_bn_bounds(bn_objective(), gamma=1.0, eta=1.5, steps=5,
                          seed=0, batch_size=4)
    assert rep.verdict == "not_applicable"
    with pytest.raises(PreconditionError, match="batch norm"):
        check_bn_bounds(tiny_mlp(), gamma=1.0, eta=0.5, steps=1, seed=0,
                        batch_size=4)
    with pytest.raises(PreconditionError, match="batch_size"):
        check_bn_bounds(bn_objective(), gamma=1.0, eta=0.5, steps=1,
                        seed=0, batch_size=1)
    with pytest.raises(PreconditionError, match="gamma"):
        check_bn_bounds(bn_objective(), gamma=0.0, eta=0.5, steps=1,
                        seed=0, batch_size=4)


# ---------------------------------------------------------------------------
# invariance detection


def quad_map(eta, gamma=0.0):
    return UpdateMap(Quadratic([1.0]), Schedule.constant(eta), gamma=gamma,
                     batch_size=1, sampling="iid", seed=0)


def test_detect_invariance_constant_trajectory():
    traj = run_trajectory(quad_map(0.1), theta0=np.array([0.0]),
                          num_steps=100, stride=1)
    found = detect_invariance(traj, Quadratic([1.0]), window=10)
    assert found.reached
    assert found.step == 10
    assert found.stat == 0.0
    assert found.window == 10


def test_detect_invariance_geometric_descent_never_flat():
    # Self-similar decay: the per-window change always dwarfs the
    # within-window spread, so the adaptive tolerance never triggers.
    traj = run_trajectory(quad_map(0.1), theta0=np.array([1.0]),
                          num_steps=400, stride=1)
    found = detect_invariance(traj, Quadratic([1.0]), window=10)
    assert not found.reached
    assert found.step is None
    assert found.stat < 0.0
    assert found.tol > 0.0


def test_detect_invariance_explicit_tol():
    traj = run_trajectory(quad_map(0.1), theta0=np.array([1.0]),
                          num_steps=400, stride=1)
    found = detect_invariance(traj, Quadratic([1.0]), window=10, tol=1e9)
    assert found.reached
    assert found.step == 10
    assert found.tol == 1e9


def test_detect_invariance_needs_three_windows():
    traj = run_trajectory(quad_map(0.1), theta0=np.array([0.0]),
                          num_steps=25, stride=1)
    found = detect_invariance(traj, Quadratic([1.0]), window=10)
    assert not found.reached


def test_detect_invariance_input_validation():
    traj = run_trajectory(quad_map(0.1), theta0=np.array([1.0]),
                          num_steps=40, stride=1)
    with pytest.raises(ValueError, match="window"):
        detect_invariance(traj, Quadratic([1.0]), window=1)
    strided = run_trajectory(quad_map(0.1), theta0=np.array([1.0]),
                             num_steps=40, stride=2)
    with pytest.raises(ValueError, match="stride"):
        detect_invariance(strided, Quadratic([1.0]), window=5)


# ---------------------------------------------------------------------------
# smaller-step decrease


def two_point_measure(a=0.7, n=10):
    atoms = np.array([[a if i % 2 == 0 else -a] for i in range(n)])
    return EmpiricalMeasure(atoms)


def test_smaller_step_two_cycle_closed_form():
    # Quadratic with curvature 1 at eta = 2: theta' = (1 - 2c) theta, so
    # f(theta') - f(theta) = ((1-2c)^2 - 1) f(theta) < 0 for c in (0,1),
    # with zero variance because every atom has the same |theta|.
    measure = two_point_measure()
    rep = check_smaller_step(measure, quad_map(2.0), samples=200, seed=1)
    assert rep.verdict == "pass"
    assert rep.eta == 2.0
    assert rep.grad_sq_mean == pytest.approx(0.7 ** 2, rel=1e-15)
    f0 = 0.5 * 0.7 ** 2
    expected = [((1.0 - 2.0 * c) ** 2 - 1.0) * f0 for c in rep.c_grid]
    assert rep.estimates == pytest.approx(expected, rel=1e-12, abs=1e-15)
    assert rep.stderrs == pytest.approx([0.0] * len(rep.c_grid), abs=1e-15)
    assert rep.sign_pattern == "-" * len(rep.c_grid)
    assert rep.largest_passing_c == 0.5
    assert rep.smallest_passing_c == min(rep.c_grid)
    # Constant Hessian: sampled curvature-dispersion proxy is exactly 0.
    assert rep.m_hat == 0.0
    assert rep.g_max == pytest.approx(0.7, rel=1e-12)
    assert rep.summary_line().startswith("smaller_step: PASS")


def test_smaller_step_sign_pattern_flips_past_stability():
    # c = 1.5 overshoots (|1 - 2c| = 2 doubles the loss), c = 0.5 lands
    # on the minimum; the grid is ordered large to small so the report
    # shows the non-negative prefix then the negative suffix.
    rep = check_smaller_step(two_point_measure(), quad_map(2.0),
                             c_grid=(1.5, 0.5), samples=200, seed=1)
    assert rep.sign_pattern == "+-"
    assert rep.verdict == "pass"
    assert rep.largest_passing_c == 0.5
    f0 = 0.5 * 0.7 ** 2
    assert rep.estimates[0] == pytest.approx(3.0 * f0, rel=1e-12)


def test_smaller_step_stationary_measure_not_applicable():
    measure = EmpiricalMeasure(np.zeros((10, 1)))
    rep = check_smaller_step(measure, quad_map(2.0), samples=200, seed=1)
    assert rep.verdict == "not_applicable"
    assert rep.grad_sq_mean == 0.0
    assert rep.estimates == [] and rep.stderrs == []
    assert rep.sign_pattern == ""
    assert rep.g_max is None and rep.m_hat is None
    assert rep.largest_passing_c is None
    assert "stationary" in rep.summary_line()


def test_smaller_step_input_validation():
    with pytest.raises(PreconditionError, match="atoms"):
        check_smaller_step(EmpiricalMeasure(np.ones((5, 1))), quad_map(2.0))
    with pytest.raises(ValueError, match="100"):
        check_smaller_step(two_point_measure(), quad_map(2.0), samples=50)


def test_smaller_step_echoes_detection_window():
    rep = check_smaller_step(two_point_measure(), quad_map(2.0),
                             samples=200, seed=1, window=7, tol=0.125)
    assert rep.window == 7
    assert rep.tol == 0.125
    assert rep.to_dict()["window"] == 7


def test_smaller_step_seed_reproducible():
    a = check_smaller_step(two_point_measure(0.3), quad_map(0.9, gamma=0.1),
                           samples=300, seed=5)
    b = check_smaller_step(two_point_measure(0.3), quad_map(0.9, gamma=0.1),
                           samples=300, seed=5)
    assert a.estimates == b.estimates
    assert a.stderrs == b.stderrs
    assert a.m_hat == b.m_hat


# ---------------------------------------------------------------------------
# cross-entropy lemma


def test_ce_lemma_passes():
    rep = check_ce_lemma(dims=(2, 7), trials=2000, seed=0)
    assert rep.verdict == "pass"
    assert rep.bound_violations == 0
    assert rep.grad_violations == 0
    assert rep.lipschitz_violations == 0
    assert rep.max_grad_norm <= C_ELL + 1e-12
    assert rep.max_bound_excess <= 1e-12
    assert rep.summary_line().startswith("ce_lemma: PASS")


def test_ce_lemma_scalar_dims():
    rep = check_ce_lemma(dims=5, trials=500, seed=3)
    assert rep.dims == [5]
    assert rep.verdict == "pass"


def test_ce_lemma_preconditions():
    with pytest.raises(PreconditionError, match="at least 2"):
        check_ce_lemma(dims=(1, 4), trials=10)
    with pytest.raises(PreconditionError, match="trial"):
        check_ce_lemma(dims=(2,), trials=0)


# ---------------------------------------------------------------------------
# report serialization


def test_write_report_bytes_deterministic(tmp_path):
    rep = check_ce_lemma(dims=(2, 5), trials=200, seed=9)
    p1 = write_report(rep, tmp_path / "a")
    p2 = write_report(check_ce_lemma(dims=(2, 5), trials=200, seed=9),
                      tmp_path / "b")
    assert p1.name == "ce_lemma_report.json"
    assert p1.read_bytes() == p2.read_bytes()
    text = p1.read_text()
    assert text.endswith("\n")
    loaded = json.loads(text)
    assert loaded["verdict"] == "pass"
    assert loaded["config"]["trials"] == 200


def test_write_report_compact_drops_series(tmp_path):
    rep = check_compact_domain(tiny_mlp(), gamma=1.0, eta=1.0, steps=5,
                               seed=0, batch_size=2, store_series=True)
    path = write_report(rep, tmp_path)
    loaded = json.loads(path.read_text())
    assert "opnorm_series" not in loaded
    assert loaded["w"] == pytest.approx(rep.w)
    assert loaded["seeds"] == [0]
