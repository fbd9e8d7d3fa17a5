import numpy as np
import pytest

from _oracles import finite_diff_hessian, jacobi_singular_values
from ergodyn.data import make_blobs
from ergodyn.objectives.linalg import hvp, operator_norm
from ergodyn.objectives.mlp import MlpObjective, MlpSpec
from ergodyn.objectives.synthetic import Quadratic, SinProduct


def test_operator_norm_against_jacobi_svd():
    rng = np.random.default_rng(0)
    for shape in [(3, 3), (5, 2), (2, 7), (10, 10), (1, 4)]:
        for scale in (1e-3, 1.0, 1e3):
            W = scale * rng.standard_normal(shape)
            sigma = jacobi_singular_values(W)[0]
            got = operator_norm(W)
            assert abs(got - sigma) <= 1e-8 * sigma


def test_operator_norm_known_matrices():
    assert operator_norm(np.zeros((3, 2))) == 0.0
    np.testing.assert_allclose(operator_norm(np.diag([3.0, -7.0, 1.0])), 7.0,
                               rtol=1e-10)
    # rank-1: norm is the product of the factor norms
    u = np.array([1.0, 2.0, 2.0])
    v = np.array([3.0, 4.0])
    np.testing.assert_allclose(operator_norm(np.outer(u, v)), 15.0, rtol=1e-10)


def test_operator_norm_repeated_top_singular_value():
    # power iteration on W^T W still converges when the top value is tied
    W = np.diag([5.0, 5.0, 1.0])
    np.testing.assert_allclose(operator_norm(W), 5.0, rtol=1e-8)


def test_operator_norm_validation():
    with pytest.raises(ValueError):
        operator_norm(np.zeros(3))
    with pytest.raises(ValueError):
        operator_norm(np.array([[np.inf, 0.0], [0.0, 1.0]]))


def test_hvp_exact_on_quadratic():
    obj = Quadratic([2.0, 5.0, 0.5])
    theta = np.array([1.0, -1.0, 3.0])
    v = np.array([1.0, 2.0, -1.0])
    got = hvp(obj, theta, v)
    np.testing.assert_allclose(got, [2.0, 10.0, -0.5], rtol=1e-9)


def test_hvp_linearity_and_symmetry():
    obj = SinProduct()
    theta = np.array([0.7, 1.9])
    rng = np.random.default_rng(1)
    v, w = rng.normal(size=2), rng.normal(size=2)
    # linearity in the direction (exact under the rescaled probe)
    np.testing.assert_allclose(hvp(obj, theta, 3.0 * v), 3.0 * hvp(obj, theta, v),
                               rtol=1e-9)
    # symmetry of the underlying Hessian: w.Hv == v.Hw
    np.testing.assert_allclose(w @ hvp(obj, theta, v), v @ hvp(obj, theta, w),
                               rtol=1e-6)


def test_hvp_matches_dense_fd_hessian_on_mlp():
    data = make_blobs(3, 2, 6, seed=0)
    obj = MlpObjective(MlpSpec((2, 4, 3), ("tanh", "identity")), data)
    rng = np.random.default_rng(2)
    theta = np.asarray(obj.init_theta(rng))
    H = finite_diff_hessian(lambda t: obj.loss_and_grad(t)[1], theta)
    for _ in range(5):
        v = rng.normal(size=obj.dim)
        got = hvp(obj, theta, v)
        want = H @ v
        assert np.linalg.norm(got - want) <= 1e-3 * max(np.linalg.norm(want), 1e-8)


def test_hvp_respects_batch():
    data = make_blobs(3, 2, 6, seed=1)
    obj = MlpObjective(MlpSpec((2, 4, 3), ("tanh", "identity")), data)
    theta = np.asarray(obj.init_theta(np.random.default_rng(3)))
    v = np.ones(obj.dim)
    batch = np.array([0, 1, 2])
    full = hvp(obj, theta, v)
    sub = hvp(obj, theta, v, batch=batch)
    assert not np.allclose(full, sub)


def test_hvp_validation():
    obj = Quadratic([1.0])
    with pytest.raises(ValueError, match="zero"):
        hvp(obj, np.array([1.0]), np.array([0.0]))
    with pytest.raises(ValueError, match="shape"):
        hvp(obj, np.array([1.0]), np.ones(2))
