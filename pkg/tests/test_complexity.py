import math

import numpy as np
import pytest

from qgeom import numerics
from qgeom.complexity import (
    ORBIT_CONST,
    RKind,
    collinearity_diagnostic,
    complexity_report,
    numeric_orbit_infimum,
    q_functional_gradient,
    quotient_theta_norm,
    unit_orbit_infimum,
)
from qgeom.dynamics import gradient_descent
from qgeom.errors import ValidationError
from qgeom.model import Dataset, LossKind, QCoordinates, Theta, design_matrix, q_matrix, realize, unvech, vech
from qgeom.symmetry import apply_group, gauge_normalize, random_orbit_element


def _unit_cost(a, r, c):
    return (a / c**2) ** 2 + (c * r) ** 2


def test_report_on_diagonal_q():
    rep = complexity_report(Theta([1.0, 1.0], [[1.0, 0, 0], [0, 1.0, 0]]))
    assert rep.q_frobenius == pytest.approx(math.sqrt(2))
    assert rep.q_operator == pytest.approx(1.0)
    assert rep.q_nuclear == pytest.approx(2.0)
    assert rep.stable_rank == pytest.approx(2.0)
    np.testing.assert_allclose(rep.singular_values, [1, 1, 0], atol=1e-15)

    rep = complexity_report(Theta([1.0, -1.0], [[1.0, 0], [0, 1.0]]))
    assert rep.q_nuclear == pytest.approx(2.0)
    assert rep.q_frobenius == pytest.approx(math.sqrt(2))
    assert rep.q_operator == pytest.approx(1.0)


def test_report_single_unit():
    rep = complexity_report(Theta([1.0], [[1.0, 0.0]]))
    assert rep.theta_norm_sq == 2.0
    assert rep.path_like == 1.0
    assert rep.quotient_theta_norm == pytest.approx(1.889881575, abs=1e-9)
    assert not rep.closure_attained


def test_orbit_constant():
    assert ORBIT_CONST == pytest.approx(3 * 2 ** (-2 / 3))


def test_quotient_norm_examples():
    assert quotient_theta_norm(Theta([1.0], [[1.0]])) == pytest.approx(1.889881575, abs=1e-9)
    assert quotient_theta_norm(Theta([0.0], [[3.0, 4.0]])) == 0.0
    with pytest.raises(ValidationError):
        quotient_theta_norm(Theta([1.0], [[1.0]]), p=3)


def test_closed_form_matches_golden_section_on_grid():
    worst = 0.0
    for a in np.linspace(0.1, 5.0, 10):
        for r in np.linspace(0.1, 5.0, 10):
            num = numeric_orbit_infimum(_unit_cost, Theta([a], [[r, 0.0]]))
            worst = max(worst, abs(num - unit_orbit_infimum(a, r)) / unit_orbit_infimum(a, r))
    assert worst <= 1e-6


def test_closed_form_matches_direct_scan():
    """Independent oracle: evaluate the orbit directly on a dense scale grid."""
    a, r = 0.7, 1.9
    cs = np.exp(np.linspace(-3, 3, 400001))
    assert unit_orbit_infimum(a, r) == pytest.approx(np.min(_unit_cost(a, r, cs)), rel=1e-9)


def test_q_level_fields_invariant_and_theta_norm_not():
    rng = np.random.default_rng(0)
    for _ in range(20):
        theta = Theta(rng.standard_normal(5), rng.standard_normal((5, 4)))
        base = complexity_report(theta)
        other = complexity_report(apply_group(random_orbit_element(5, (-1.0, 1.0), rng), theta))
        for name in ("q_frobenius", "q_nuclear", "q_operator", "stable_rank", "quotient_theta_norm"):
            assert abs(getattr(other, name) - getattr(base, name)) <= 1e-10 * max(1.0, abs(getattr(base, name)))
        np.testing.assert_allclose(other.singular_values, base.singular_values, atol=1e-10)


def test_rescale_by_two_increases_theta_norm():
    rng = np.random.default_rng(1)
    theta = gauge_normalize(Theta(rng.standard_normal(4), rng.standard_normal((4, 3))))
    doubled = Theta(theta.a / 4.0, theta.W * 2.0)
    assert complexity_report(doubled).theta_norm_sq > complexity_report(theta).theta_norm_sq
    assert complexity_report(doubled).quotient_theta_norm == pytest.approx(complexity_report(theta).quotient_theta_norm)


def test_closure_flag_and_zero_q():
    rep = complexity_report(Theta([1.0, 0.0], [[0.0, 0.0], [0.0, 0.0]]))
    assert rep.closure_attained
    assert math.isnan(rep.stable_rank)
    assert rep.to_row()["closure_attained"] == 1


def test_to_row_singular_values_roundtrip():
    rep = complexity_report(Theta([2.0, -0.5], [[1.0, 0.0], [0.3, 0.7]]))
    sv = [float(v) for v in rep.to_row()["sv"].split(";")]
    np.testing.assert_array_equal(sv, rep.singular_values)


def test_functional_gradients_match_finite_differences():
    rng = np.random.default_rng(2)
    q = QCoordinates.from_vector(rng.standard_normal(6))
    d = q.d
    fns = {
        RKind.FROBENIUS_SQ: lambda v: 0.5 * float(v @ v),
        RKind.NUCLEAR: lambda v: float(np.sum(np.abs(np.linalg.eigvalsh(unvech(v, d))))),
        RKind.OPERATOR: lambda v: float(np.max(np.abs(np.linalg.eigvalsh(unvech(v, d))))),
    }
    for kind, fn in fns.items():
        g = q_functional_gradient(q, kind)
        np.testing.assert_allclose(g, numerics.fd_gradient(fn, q.q), atol=1e-7)


def test_functional_gradient_undefined_cases():
    assert q_functional_gradient(QCoordinates.from_matrix(np.diag([1.0, 0.0])), RKind.NUCLEAR) is None
    assert q_functional_gradient(QCoordinates.from_matrix(np.diag([1.0, -1.0])), RKind.OPERATOR) is None
    np.testing.assert_array_equal(q_functional_gradient(QCoordinates.from_matrix(np.eye(2)), RKind.CONSTANT), 0.0)


def _trajectory(rng, y_zero=False):
    teacher = Theta(rng.standard_normal(3), rng.standard_normal((3, 3)))
    X = rng.standard_normal((20, 3))
    y = np.zeros(20) if y_zero else realize(teacher, X)
    data = Dataset(X, y)
    rec = gradient_descent(Theta(rng.standard_normal(3) * 0.5, rng.standard_normal((3, 3)) * 0.5), data, LossKind.SQUARED, 1e-3, 50, record_stride=10)
    return rec, data


def test_collinearity_with_loss_itself_is_one():
    rec, data = _trajectory(np.random.default_rng(3))
    cos = collinearity_diagnostic(rec, data, LossKind.SQUARED, RKind.LOSS)
    np.testing.assert_allclose(cos, 1.0, atol=1e-12)


def test_collinearity_with_constant_is_undefined():
    rec, data = _trajectory(np.random.default_rng(4))
    assert all(c is None for c in collinearity_diagnostic(rec, data, LossKind.SQUARED, RKind.CONSTANT))


def test_collinearity_frobenius_with_zero_targets():
    """grad R = q and grad L = M q, so with M invertible the cosine is
    |q|^2 / sqrt(q^T M^-1 q * q^T M q)."""
    rec, data = _trajectory(np.random.default_rng(5), y_zero=True)
    cos = collinearity_diagnostic(rec, data, LossKind.SQUARED, RKind.FROBENIUS_SQ)
    A = design_matrix(data.X)
    M = A.T @ A / data.n
    for c, q in zip(cos, rec.q_snapshots):
        v = q.q
        expected = (v @ v) / math.sqrt((v @ np.linalg.solve(M, v)) * (v @ M @ v))
        assert c == pytest.approx(expected, abs=1e-10)
        assert -1.0 <= c <= 1.0


def test_nuclear_gradient_consistent_with_vech():
    Q = np.diag([2.0, -1.0, 0.5])
    g = q_functional_gradient(QCoordinates.from_matrix(Q), RKind.NUCLEAR)
    np.testing.assert_allclose(g, vech(np.diag([1.0, -1.0, 1.0])), atol=1e-14)
    assert q_matrix(Theta([1.0], [[1.0, 0, 0]])).d == 3
