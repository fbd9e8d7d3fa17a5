import numpy as np
import pytest

from _oracles import enumerated_time_average
from ergodyn.data import make_blobs
from ergodyn.dynamics import Schedule, UpdateMap, run_trajectory
from ergodyn.measures import (EmpiricalMeasure, Observable, build_measure,
                              coordinate_observable, grad_norm_observable,
                              hoeffding_envelope, invariance_residual,
                              loss_observable, measure_distance, time_average,
                              vanishing_change, vanishing_change_sweep)
from ergodyn.objectives.mlp import MlpObjective, MlpSpec
from ergodyn.objectives.synthetic import Quadratic, SinProduct


def _mlp_map(seed=0, eta=0.5, gamma=0.01, batch_size=4):
    data = make_blobs(3, 2, 8, seed=1)
    obj = MlpObjective(MlpSpec((2, 5, 3), ("tanh", "identity")), data)
    return UpdateMap(obj, Schedule.constant(eta), gamma=gamma,
                     batch_size=batch_size, seed=seed)


# -- measures and averages ---------------------------------------------------

def test_measure_defaults_to_uniform_weights():
    m = EmpiricalMeasure(np.arange(6.0).reshape(3, 2))
    np.testing.assert_allclose(m.weights, [1 / 3] * 3)
    assert m.num_atoms == 3 and m.dim == 2


def test_measure_validation():
    with pytest.raises(ValueError, match="sum"):
        EmpiricalMeasure(np.zeros((2, 1)), np.array([0.6, 0.6]))
    with pytest.raises(ValueError, match="non-negative"):
        EmpiricalMeasure(np.zeros((2, 1)), np.array([1.5, -0.5]))
    with pytest.raises(ValueError, match="non-finite"):
        EmpiricalMeasure(np.array([[np.nan]]))


def test_build_measure_excludes_init_and_burn_in():
    um = _mlp_map()
    traj = run_trajectory(um, num_steps=10)
    mu = build_measure(traj)
    assert mu.num_atoms == 10                       # theta_1 .. theta_10
    np.testing.assert_array_equal(mu.atoms[0], traj.iterate_at(1))
    mu2 = build_measure(traj, burn_in=7)
    assert mu2.num_atoms == 3                       # theta_8, theta_9, theta_10
    np.testing.assert_array_equal(mu2.atoms[0], traj.iterate_at(8))
    with pytest.raises(ValueError, match="burn_in"):
        build_measure(traj, burn_in=10)


def test_time_average_matches_plain_mean():
    um = _mlp_map(seed=2)
    traj = run_trajectory(um, num_steps=20)
    mu = build_measure(traj)
    obs = loss_observable(um.objective)
    want = enumerated_time_average(
        [um.objective.loss(traj.iterate_at(t)) for t in range(1, 21)])
    np.testing.assert_allclose(time_average(mu, obs), want, rtol=1e-12)


def test_observables():
    obj = Quadratic([2.0, 2.0])
    atoms = np.array([[1.0, 0.0], [0.0, 2.0]])
    np.testing.assert_allclose(loss_observable(obj)(atoms), [1.0, 4.0])
    np.testing.assert_allclose(grad_norm_observable(obj)(atoms), [2.0, 4.0])
    np.testing.assert_array_equal(coordinate_observable(1)(atoms), [0.0, 2.0])


def test_observable_shape_check():
    bad = Observable("bad", lambda atoms: np.zeros((2, 2)))
    with pytest.raises(ValueError, match="shape"):
        bad(np.zeros((3, 2)))


# -- envelope and statistic --------------------------------------------------

def test_hoeffding_envelope_closed_form():
    M, delta = 3.0, 0.1
    n = np.array([4, 100])
    want = M * np.sqrt(2 * np.log(2 / delta) / n) + 2 * M / n
    np.testing.assert_allclose(hoeffding_envelope(M, delta, n), want, rtol=1e-15)


def test_deterministic_map_telescopes():
    obj = SinProduct()
    um = UpdateMap(obj, Schedule.constant(0.01), seed=3)
    traj = run_trajectory(um, num_steps=500)
    obs = loss_observable(obj)
    obs.bound = 100.0
    rep = vanishing_change(traj, um, obs)
    assert rep.deterministic
    phi = obs(traj.iterates)
    for n, dn in zip(rep.n_grid, rep.delta_n):
        want = (phi[1] - phi[n + 1]) / n
        assert abs(dn - want) <= 1e-12 * max(abs(want), 1.0)


def test_shift_mode_telescopes_even_with_noise():
    um = _mlp_map(seed=4)
    traj = run_trajectory(um, num_steps=300)
    obs = loss_observable(um.objective)
    obs.bound = 10.0
    rep = vanishing_change(traj, um, obs, mode="shift")
    phi = obs(traj.iterates)
    for n, dn in zip(rep.n_grid, rep.delta_n):
        want = (phi[1] - phi[n + 1]) / n
        assert abs(dn - want) <= 1e-12 * max(abs(want), 1.0)


def test_resample_mode_is_reproducible():
    um = _mlp_map(seed=5)
    traj = run_trajectory(um, num_steps=100)
    obs = loss_observable(um.objective)
    obs.bound = 10.0
    a = vanishing_change(traj, um, obs)
    b = vanishing_change(traj, um, obs)
    np.testing.assert_array_equal(a.delta_n, b.delta_n)


def test_unbounded_observable_warns():
    um = _mlp_map(seed=5)
    traj = run_trajectory(um, num_steps=50)
    with pytest.warns(UserWarning, match="no bound"):
        vanishing_change(traj, um, loss_observable(um.objective))


def test_sweep_matches_solo_runs():
    # the stacked runner must reproduce the one-seed path: same init,
    # batch and resample streams, so the statistics agree to rounding
    um = _mlp_map(seed=0)
    obs = loss_observable(um.objective)
    obs.bound = 10.0
    n_grid = [10, 25, 60]
    reports = vanishing_change_sweep(um, [7, 11], 60, obs, n_grid=n_grid)
    assert [r.seed for r in reports] == [7, 11]
    for rep in reports:
        solo_um = _mlp_map(seed=rep.seed)
        traj = run_trajectory(solo_um, num_steps=60)
        want = vanishing_change(traj, solo_um, obs, n_grid=n_grid)
        np.testing.assert_allclose(rep.delta_n, want.delta_n,
                                   rtol=1e-12, atol=1e-14)
        np.testing.assert_array_equal(rep.envelope, want.envelope)


def test_vanishing_change_rejects_strided_trajectory():
    um = _mlp_map(seed=6)
    traj = run_trajectory(um, num_steps=50, stride=5)
    obs = loss_observable(um.objective)
    obs.bound = 10.0
    with pytest.raises(ValueError, match="stride"):
        vanishing_change(traj, um, obs)


def test_vanishing_change_argument_validation():
    um = _mlp_map(seed=6)
    traj = run_trajectory(um, num_steps=50)
    obs = loss_observable(um.objective)
    obs.bound = 10.0
    with pytest.raises(ValueError, match="delta"):
        vanishing_change(traj, um, obs, delta=1.5)
    with pytest.raises(ValueError, match="mode"):
        vanishing_change(traj, um, obs, mode="warp")
    with pytest.raises(ValueError, match="n_grid"):
        vanishing_change(traj, um, obs, n_grid=[0, 10])
    with pytest.raises(ValueError, match="n_grid"):
        vanishing_change(traj, um, obs, n_grid=[500])


def test_report_serialization():
    um = _mlp_map(seed=8)
    traj = run_trajectory(um, num_steps=40)
    obs = loss_observable(um.objective)
    obs.bound = 10.0
    rep = vanishing_change(traj, um, obs)
    d = rep.to_dict()
    assert d["observable"] == "loss"
    assert isinstance(d["all_contained"], bool)
    assert len(d["n_grid"]) == len(d["delta_n"]) == len(d["contained"])


# -- invariance residual -----------------------------------------------------

def test_invariance_residual_zero_on_two_cycle():
    # eta * curvature = 2 flips the sign each step: {a, -a} is invariant
    obj = Quadratic([1.0])
    um = UpdateMap(obj, Schedule.constant(2.0), seed=0)
    mu = EmpiricalMeasure(np.array([[0.7], [-0.7]]))
    residual, stderr = invariance_residual(mu, um, loss_observable(obj))
    assert residual == 0.0
    assert stderr == 0.0


def test_invariance_residual_detects_transience():
    # a contracting map pushes loss down, so the residual is positive
    obj = Quadratic([1.0])
    um = UpdateMap(obj, Schedule.constant(0.5), seed=0)
    mu = EmpiricalMeasure(np.array([[1.0], [2.0]]))
    residual, _ = invariance_residual(mu, um, loss_observable(obj))
    assert residual > 0.1


# -- distances ---------------------------------------------------------------

def test_distance_identity_and_symmetry():
    rng = np.random.default_rng(0)
    mu = EmpiricalMeasure(rng.normal(size=(20, 3)))
    nu = EmpiricalMeasure(rng.normal(size=(15, 3)))
    assert measure_distance(mu, mu) == 0.0
    np.testing.assert_allclose(measure_distance(mu, nu),
                               measure_distance(nu, mu), rtol=1e-12)
    assert measure_distance(mu, nu) > 0


def test_distance_two_diracs_closed_form():
    a, b = 0.3, 2.3
    mu = EmpiricalMeasure(np.array([[a]]))
    nu = EmpiricalMeasure(np.array([[b]]))
    np.testing.assert_allclose(measure_distance(mu, nu),
                               np.sqrt(2 * abs(b - a)), rtol=1e-12)


def test_distance_triangle_inequality():
    rng = np.random.default_rng(1)
    for _ in range(20):
        mu = EmpiricalMeasure(rng.normal(size=(8, 2)))
        nu = EmpiricalMeasure(rng.normal(size=(5, 2)))
        kappa = EmpiricalMeasure(rng.normal(size=(6, 2)))
        d = measure_distance
        assert d(mu, kappa) <= d(mu, nu) + d(nu, kappa) + 1e-12


def test_distance_respects_weights():
    atoms = np.array([[0.0], [1.0]])
    mu = EmpiricalMeasure(atoms, np.array([0.5, 0.5]))
    nu = EmpiricalMeasure(atoms, np.array([0.9, 0.1]))
    assert measure_distance(mu, nu) > 0
    nu_same = EmpiricalMeasure(atoms, np.array([0.5, 0.5]))
    assert measure_distance(mu, nu_same) == 0.0


def test_distance_dimension_mismatch():
    with pytest.raises(ValueError, match="dimension"):
        measure_distance(EmpiricalMeasure(np.zeros((2, 2))),
                         EmpiricalMeasure(np.zeros((2, 3))))
