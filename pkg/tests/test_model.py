import math

import numpy as np
import pytest

from qgeom import numerics
from qgeom.errors import ValidationError
from qgeom.model import (
    Dataset,
    LossKind,
    QCoordinates,
    Task,
    Theta,
    design_matrix,
    grad_q,
    grad_theta,
    hess_q,
    hess_theta,
    jacobian,
    loss,
    loss_q,
    minimize_q,
    q_jacobian,
    q_matrix,
    realize,
    sym_dim,
    unvech,
    vech,
)


def _random(rng, m, d, n, kind):
    theta = Theta(rng.standard_normal(m) * 0.7, rng.standard_normal((m, d)) * 0.7)
    X = rng.standard_normal((n, d))
    if kind is LossKind.SQUARED:
        return theta, Dataset(X, rng.standard_normal(n), Task.REGRESSION)
    return theta, Dataset(X, rng.choice([-1.0, 1.0], n), Task.CLASSIFICATION)


def test_realize_examples():
    assert realize(Theta([1.0], [[1.0, 0.0]]), [[2.0, 0.0]])[0] == 4.0
    cancel = Theta([1.0, -1.0], [[1.0, 0.0], [1.0, 0.0]])
    np.testing.assert_array_equal(realize(cancel, np.random.default_rng(0).standard_normal((5, 2))), 0.0)
    assert realize(Theta([1.0, 1.0], [[1.0, 0.0], [0.0, 1.0]]), [[1.0, 1.0]])[0] == 2.0


def test_q_matrix_examples():
    np.testing.assert_array_equal(q_matrix(Theta([1.0, -1.0], [[1.0, 0.0], [0.0, 1.0]])).Q, np.diag([1.0, -1.0]))
    rng = np.random.default_rng(2)
    theta = Theta(rng.standard_normal(3), rng.standard_normal((3, 4)))
    c = 1.7
    scaled = Theta(theta.a / c**2, theta.W * c)
    np.testing.assert_allclose(q_matrix(scaled).Q, q_matrix(theta).Q, atol=1e-12)
    np.testing.assert_array_equal(q_matrix(Theta([1.0, 1.0], [[1.0, 0, 0], [1.0, 0, 0]])).Q, np.diag([2.0, 0, 0]))


def test_factorization_identity():
    rng = np.random.default_rng(3)
    for _ in range(1000):
        m, d, n = int(rng.integers(1, 9)), int(rng.integers(1, 7)), int(rng.integers(1, 30))
        theta = Theta(rng.standard_normal(m), rng.standard_normal((m, d)))
        X = rng.standard_normal((n, d))
        Q = q_matrix(theta).Q
        direct = np.einsum("ki,ij,kj->k", X, Q, X)
        f = realize(theta, X)
        assert np.max(np.abs(f - direct)) <= 1e-10 * max(1.0, np.max(np.abs(f)))
        np.testing.assert_allclose(design_matrix(X) @ q_matrix(theta).q, f, atol=1e-10 * max(1.0, np.max(np.abs(f))))


def test_vech_is_isometric_and_invertible():
    rng = np.random.default_rng(4)
    A = rng.standard_normal((4, 4))
    A = A + A.T
    assert vech(A).size == sym_dim(4) == 10
    assert abs(np.linalg.norm(vech(A)) - np.linalg.norm(A)) <= 1e-12
    np.testing.assert_allclose(unvech(vech(A)), A, atol=1e-14)


def test_loss_examples():
    X = np.array([[1.0, 0.0]])
    theta = Theta([1.0], [[1.0, 0.0]])
    assert loss(theta, Dataset(X, [0.0]), LossKind.SQUARED) == 0.5
    assert loss(theta, Dataset(X, [1.0]), LossKind.SQUARED) == 0.0
    zero = Theta([0.0], [[0.0, 0.0]])
    data = Dataset(np.ones((3, 2)), [1.0, -1.0, 1.0], Task.CLASSIFICATION)
    assert abs(loss(zero, data, LossKind.LOGISTIC) - math.log(2)) <= 1e-15


def test_logistic_is_stable_for_large_margins():
    data = Dataset(np.array([[10.0]]), [1.0], Task.CLASSIFICATION)
    theta = Theta([1e4], [[1.0]])
    assert loss(theta, data, LossKind.LOGISTIC) >= 0.0
    assert math.isfinite(loss(Theta([-1e4], [[1.0]]), data, LossKind.LOGISTIC))


def test_classification_needs_sign_labels():
    with pytest.raises(ValidationError):
        Dataset(np.ones((2, 1)), [0.0, 1.0], Task.CLASSIFICATION)


def test_logistic_on_regression_data_rejected():
    data = Dataset(np.ones((2, 1)), [0.3, 1.0], Task.REGRESSION)
    with pytest.raises(ValidationError):
        loss(Theta([1.0], [[1.0]]), data, LossKind.LOGISTIC)


def test_shape_mismatch_rejected():
    with pytest.raises(ValidationError):
        realize(Theta([1.0], [[1.0, 0.0]]), np.ones((3, 3)))


def test_single_neuron_hand_derivatives():
    theta = Theta([1.0], [[1.0]])
    data = Dataset(np.array([[2.0]]), [0.0])
    np.testing.assert_array_equal(jacobian(theta, data.X), [[4.0, 8.0]])
    np.testing.assert_allclose(grad_theta(theta, data, LossKind.SQUARED), [16.0, 32.0])
    assert design_matrix(data.X)[0, 0] == 4.0
    assert hess_q(q_matrix(theta), data, LossKind.SQUARED)[0, 0] == 16.0


def test_jacobian_matches_fd_and_zero_unit_rows():
    rng = np.random.default_rng(5)
    theta = Theta(np.r_[rng.standard_normal(2), 0.0], np.vstack([rng.standard_normal((2, 3)), np.zeros((1, 3))]))
    X = rng.standard_normal((7, 3))
    J = jacobian(theta, X)
    Jfd = numerics.fd_jacobian(lambda v: realize(Theta.from_flat(v, 3, 3), X), theta.flat())
    assert np.max(np.abs(J - Jfd)) <= 1e-6 * np.max(np.abs(J))
    np.testing.assert_array_equal(J[:, 8:], 0.0)


@pytest.mark.parametrize("kind", [LossKind.SQUARED, LossKind.LOGISTIC])
def test_theta_derivatives_match_finite_differences(kind):
    rng = np.random.default_rng(6)
    for _ in range(100):
        m, d = int(rng.integers(1, 7)), int(rng.integers(1, 6))
        theta, data = _random(rng, m, d, 12, kind)
        x0 = theta.flat()
        g = grad_theta(theta, data, kind)
        gfd = numerics.fd_gradient(lambda v: loss(Theta.from_flat(v, m, d), data, kind), x0)
        assert np.max(np.abs(g - gfd)) <= 1e-6 * max(1.0, np.max(np.abs(g)))
    for _ in range(20):
        m, d = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        theta, data = _random(rng, m, d, 12, kind)
        H = hess_theta(theta, data, kind)
        Hfd = numerics.fd_jacobian(lambda v: grad_theta(Theta.from_flat(v, m, d), data, kind), theta.flat())
        assert np.max(np.abs(H - Hfd)) <= 1e-5 * max(1.0, np.max(np.abs(H)))
        np.testing.assert_array_equal(H, H.T)


@pytest.mark.parametrize("kind", [LossKind.SQUARED, LossKind.LOGISTIC])
def test_q_derivatives_match_finite_differences(kind):
    rng = np.random.default_rng(7)
    for _ in range(30):
        d = int(rng.integers(1, 5))
        theta, data = _random(rng, 2, d, 15, kind)
        q = q_matrix(theta)
        g = grad_q(q, data, kind)
        gfd = numerics.fd_gradient(lambda v: loss_q(QCoordinates.from_vector(v), data, kind), q.q)
        assert np.max(np.abs(g - gfd)) <= 1e-7 * max(1.0, np.max(np.abs(g)))
        H = hess_q(q, data, kind)
        Hfd = numerics.fd_jacobian(lambda v: grad_q(QCoordinates.from_vector(v), data, kind), q.q)
        assert np.max(np.abs(H - Hfd)) <= 1e-6 * max(1.0, np.max(np.abs(H)))


def test_squared_hess_q_independent_of_q():
    rng = np.random.default_rng(8)
    theta, data = _random(rng, 3, 3, 20, LossKind.SQUARED)
    H1 = hess_q(q_matrix(theta), data, LossKind.SQUARED)
    H2 = hess_q(QCoordinates.from_vector(rng.standard_normal(6)), data, LossKind.SQUARED)
    np.testing.assert_array_equal(H1, H2)


def test_chain_rule_through_q():
    rng = np.random.default_rng(9)
    for kind in LossKind:
        theta, data = _random(rng, 4, 3, 20, kind)
        lhs = q_jacobian(theta).T @ grad_q(q_matrix(theta), data, kind)
        np.testing.assert_allclose(lhs, grad_theta(theta, data, kind), atol=1e-12)


def test_gradient_vanishes_at_realizable_minimum():
    rng = np.random.default_rng(10)
    teacher = Theta(rng.standard_normal(3), rng.standard_normal((3, 4)))
    X = rng.standard_normal((30, 4))
    data = Dataset(X, realize(teacher, X))
    assert np.linalg.norm(grad_theta(teacher, data, LossKind.SQUARED)) <= 1e-10


def test_minimize_q_recovers_teacher():
    rng = np.random.default_rng(11)
    teacher = Theta(rng.standard_normal(3), rng.standard_normal((3, 3)))
    X = rng.standard_normal((20, 3))
    q, value = minimize_q(Dataset(X, realize(teacher, X)), LossKind.SQUARED)
    assert value <= 1e-20
    np.testing.assert_allclose(q.Q, q_matrix(teacher).Q, atol=1e-9)


def test_theta_roundtrips():
    rng = np.random.default_rng(12)
    theta = Theta(rng.standard_normal(3), rng.standard_normal((3, 2)))
    assert Theta.from_dict(theta.to_dict()) == theta
    assert Theta.from_flat(theta.flat(), 3, 2) == theta
    with pytest.raises(ValidationError):
        Theta.from_dict({"m": 4, "units": theta.to_dict()["units"]})
    with pytest.raises(ValidationError):
        Theta.from_flat(np.ones(5), 3, 2)


def test_theta_is_immutable():
    theta = Theta([1.0], [[1.0]])
    with pytest.raises(ValueError):
        theta.a[0] = 2.0
