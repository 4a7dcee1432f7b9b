"""Invariant suite run by ``qgeom check``.

Each check draws small random instances from a fixed stream, measures a
defect and compares it with a tolerance. Sizes are kept small so the whole
suite runs in a few seconds.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import numerics
from .complexity import complexity_report, numeric_orbit_infimum, unit_orbit_infimum
from .config import ExperimentConfig, default_config, rng_stream
from .dynamics import quotient_flow
from .geometry import (
    decompose,
    effective_hessian_q,
    generic_kernel_dim,
    q_chart_christoffel,
    regularity_check,
)
from .model import (
    Dataset,
    LossKind,
    QCoordinates,
    Task,
    Theta,
    grad_q,
    grad_theta,
    hess_q,
    hess_theta,
    jacobian,
    loss,
    loss_q,
    q_jacobian,
    q_matrix,
    realize,
    unvech,
    vech,
)
from .symmetry import apply_group, orbit_tangent_basis, random_orbit_element, vertical_projection

SEED = 20240601


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    measured: float
    tolerance: float
    seconds: float


def _theta(r: np.random.Generator, m: int, d: int) -> Theta:
    return Theta(r.standard_normal(m), r.standard_normal((m, d)))


def _regression(r: np.random.Generator, m: int, d: int, n: int) -> tuple[Theta, Dataset]:
    X = r.standard_normal((n, d))
    teacher = _theta(r, m, d)
    return teacher, Dataset(X, realize(teacher, X), Task.REGRESSION)


def _classification(r: np.random.Generator, m: int, d: int, n: int) -> Dataset:
    X = r.standard_normal((n, d))
    f = realize(_theta(r, m, d), X)
    return Dataset(X, np.where(f >= np.median(f), 1.0, -1.0), Task.CLASSIFICATION)


def _rel(a, b) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b))) / max(1.0, float(np.max(np.abs(b))))


def check_group_invariance() -> float:
    r = rng_stream(SEED, "check-invariance")
    worst = 0.0
    for _ in range(100):
        m, d, n = int(r.integers(1, 9)), int(r.integers(1, 7)), int(r.integers(1, 51))
        theta, X = _theta(r, m, d), r.standard_normal((n, d))
        g = random_orbit_element(m, (-1.0, 1.0), r)
        worst = max(worst, _rel(realize(apply_group(g, theta), X), realize(theta, X)))
    return worst


def check_group_action_composes() -> float:
    r = rng_stream(SEED, "check-compose")
    worst = 0.0
    for _ in range(50):
        theta = _theta(r, 5, 3)
        g1, g2 = (random_orbit_element(5, (-1.0, 1.0), r) for _ in range(2))
        lhs = apply_group(g2.compose(g1), theta).flat()
        rhs = apply_group(g2, apply_group(g1, theta)).flat()
        back = apply_group(g1.inverse(), apply_group(g1, theta)).flat()
        worst = max(worst, _rel(lhs, rhs), _rel(back, theta.flat()))
    return worst


def check_orbit_tangents_in_kernel() -> float:
    r = rng_stream(SEED, "check-tangents")
    worst = 0.0
    for _ in range(30):
        m, d = int(r.integers(1, 7)), int(r.integers(2, 6))
        theta, X = _theta(r, m, d), r.standard_normal((40, d))
        J = jacobian(theta, X)
        V = orbit_tangent_basis(theta).vectors.T
        worst = max(worst, float(np.linalg.norm(J @ V)) / (float(np.linalg.norm(J)) * float(np.linalg.norm(V))))
    return worst


def check_gradient_is_horizontal() -> float:
    r = rng_stream(SEED, "check-horizontal")
    worst = 0.0
    for i in range(30):
        m, d = int(r.integers(1, 7)), int(r.integers(2, 6))
        theta = _theta(r, m, d)
        if i % 2:
            data = _classification(r, m, d, 30)
            kind = LossKind.LOGISTIC
        else:
            data = _regression(r, m, d, 30)[1]
            kind = LossKind.SQUARED
        g = grad_theta(theta, data, kind)
        worst = max(worst, float(np.linalg.norm(vertical_projection(theta, g))) / max(float(np.linalg.norm(g)), 1e-300))
    return worst


def check_derivatives() -> float:
    r = rng_stream(SEED, "check-derivatives")
    worst = 0.0
    for i in range(6):
        m, d, n = 3, 3, 20
        kind = LossKind.LOGISTIC if i % 2 else LossKind.SQUARED
        data = _classification(r, m, d, n) if i % 2 else _regression(r, m, d, n)[1]
        theta = Theta(r.standard_normal(m) * 0.5, r.standard_normal((m, d)) * 0.5)
        x0 = theta.flat()
        f = lambda x: loss(Theta.from_flat(x, m, d), data, kind)
        g = lambda x: grad_theta(Theta.from_flat(x, m, d), data, kind)
        worst = max(worst, _rel(grad_theta(theta, data, kind), numerics.fd_gradient(f, x0)))
        worst = max(worst, _rel(hess_theta(theta, data, kind), numerics.fd_jacobian(g, x0)))
        q = q_matrix(theta)
        fq = lambda v: loss_q(QCoordinates.from_vector(v), data, kind)
        gq = lambda v: grad_q(QCoordinates.from_vector(v), data, kind)
        worst = max(worst, _rel(grad_q(q, data, kind), numerics.fd_gradient(fq, q.q)))
        worst = max(worst, _rel(hess_q(q, data, kind), numerics.fd_jacobian(gq, q.q)))
        # chain rule through the q map
        worst = max(worst, _rel(q_jacobian(theta).T @ grad_q(q, data, kind), grad_theta(theta, data, kind)))
    return worst


def check_vech_isometry() -> float:
    r = rng_stream(SEED, "check-vech")
    worst = 0.0
    for d in range(1, 7):
        A, B = r.standard_normal((2, d, d))
        A, B = A + A.T, B + B.T
        worst = max(worst, abs(float(vech(A) @ vech(B)) - float(np.trace(A @ B))) / max(1.0, float(np.linalg.norm(A) * np.linalg.norm(B))))
        worst = max(worst, _rel(unvech(vech(A)), A))
    return worst


def check_regularity() -> float:
    """Single units are regular; wider networks follow the generic kernel
    dimension; colliding units are flagged. Returns the number of failures."""
    r = rng_stream(SEED, "check-regularity")
    failures = 0
    for _ in range(10):
        d = int(r.integers(2, 6))
        theta, X = _theta(r, 1, d), r.standard_normal((3 * d + 5, d))
        failures += not regularity_check(theta, X).is_regular
    for m, d, n in [(2, 3, 20), (3, 4, 30), (5, 3, 12), (4, 4, 8)]:
        theta, X = _theta(r, m, d), r.standard_normal((n, d))
        rep = regularity_check(theta, X)
        failures += rep.kernel_dim != generic_kernel_dim(m, d, n)
        failures += not rep.locally_free
    theta = _theta(r, 3, 4)
    W = theta.W.copy()
    W[1] = W[0]
    rep = regularity_check(Theta(theta.a, W), r.standard_normal((30, 4)))
    failures += rep.is_regular or rep.unit_flags[1].collision_with != 0
    return float(failures)


def check_decomposition_orthogonal() -> float:
    r = rng_stream(SEED, "check-decompose")
    worst = 0.0
    for _ in range(10):
        theta, X = _theta(r, 3, 3), r.standard_normal((20, 3))
        geom = decompose(theta, X)
        V, H = geom.vertical.columns, geom.horizontal.columns
        worst = max(worst, float(np.max(np.abs(V.T @ H))), _rel(V @ V.T + H @ H.T, np.eye(theta.dim)))
    return worst


def check_squared_effective_spectrum() -> float:
    """For squared loss the Q-chart Hessian equals the metric."""
    r = rng_stream(SEED, "check-spectrum")
    worst = 0.0
    for _ in range(5):
        teacher, data = _regression(r, 3, 3, 15)
        _, _, summary = effective_hessian_q(q_matrix(_theta(r, 3, 3)), data, LossKind.SQUARED)
        worst = max(worst, float(np.max(np.abs(summary.spectrum - 1.0))))
    return worst


def check_q_chart_flat() -> float:
    r = rng_stream(SEED, "check-christoffel")
    teacher, data = _regression(r, 2, 3, 12)
    return float(np.max(np.abs(q_chart_christoffel(data, q_matrix(teacher)))))


def check_quotient_flow_rate() -> float:
    r = rng_stream(SEED, "check-flow")
    X = r.standard_normal((12, 3))
    teacher = Theta(np.abs(r.standard_normal(3)) + 0.2, r.standard_normal((3, 3)))
    data = Dataset(X, realize(teacher, X))
    # positive output weights keep Q definite along the straight q-path
    theta0 = Theta(np.abs(r.standard_normal(3)) + 0.2, r.standard_normal((3, 3)))
    traj = quotient_flow(theta0, data, LossKind.SQUARED, 0.01, 100, record_stride=100, method="rk4")
    expected = math.exp(-2.0 * traj.times[-1])
    return abs(traj.losses[-1] / traj.losses[0] - expected) / expected


def check_orbit_infimum() -> float:
    worst = 0.0
    for a in (0.1, 0.5, 1.0, -2.0, 7.0):
        for w in (0.2, 1.0, 3.0):
            theta = Theta([a], [[w, 0.0]])
            num = numeric_orbit_infimum(lambda a_, r_, c: (a_ / c**2) ** 2 + (c * r_) ** 2, theta)
            exact = unit_orbit_infimum(a, w)
            worst = max(worst, abs(num - exact) / exact)
    return worst


def check_q_level_complexity_invariant() -> float:
    r = rng_stream(SEED, "check-complexity")
    worst = 0.0
    fields = ("q_frobenius", "q_nuclear", "q_operator", "stable_rank", "quotient_theta_norm")
    for _ in range(10):
        theta = _theta(r, 5, 4)
        base = complexity_report(theta)
        other = complexity_report(apply_group(random_orbit_element(5, (-1.0, 1.0), r), theta))
        for name in fields:
            worst = max(worst, abs(getattr(other, name) - getattr(base, name)) / max(1.0, abs(getattr(base, name))))
    return worst


def check_config_roundtrip() -> float:
    failures = 0
    for name in ("false-flatness", "local-dynamics", "implicit-bias"):
        cfg = default_config(name)
        failures += ExperimentConfig.from_dict(cfg.to_dict()) != cfg
        failures += cfg.with_overrides({"seed": "7"}).seed != 7
    return float(failures)


def check_rng_determinism() -> float:
    a = rng_stream(5, "x").standard_normal(16)
    b = rng_stream(5, "x").standard_normal(16)
    c = rng_stream(5, "y").standard_normal(16)
    return float((not np.array_equal(a, b)) + np.array_equal(a, c))


CHECKS: list[tuple[str, Callable[[], float], float]] = [
    ("group_invariance", check_group_invariance, 1e-10),
    ("group_action_composes", check_group_action_composes, 1e-12),
    ("orbit_tangents_in_kernel", check_orbit_tangents_in_kernel, 1e-12),
    ("gradient_is_horizontal", check_gradient_is_horizontal, 1e-10),
    ("derivatives_match_fd", check_derivatives, 1e-5),
    ("vech_isometry", check_vech_isometry, 1e-12),
    ("regularity", check_regularity, 0.0),
    ("decomposition_orthogonal", check_decomposition_orthogonal, 1e-12),
    ("squared_effective_spectrum", check_squared_effective_spectrum, 1e-8),
    ("q_chart_christoffel_vanish", check_q_chart_flat, 1e-6),
    ("quotient_flow_rate", check_quotient_flow_rate, 1e-6),
    ("orbit_infimum_closed_form", check_orbit_infimum, 1e-6),
    ("q_level_complexity_invariant", check_q_level_complexity_invariant, 1e-9),
    ("config_roundtrip", check_config_roundtrip, 0.0),
    ("rng_determinism", check_rng_determinism, 0.0),
]


def run_checks(names: list[str] | None = None) -> list[CheckResult]:
    results = []
    for name, fn, tol in CHECKS:
        if names and name not in names:
            continue
        t0 = time.perf_counter()
        try:
            measured = float(fn())
            passed = math.isfinite(measured) and measured <= tol
        except Exception:  # a crashing check is a failing check
            measured, passed = math.nan, False
        results.append(CheckResult(name, bool(passed), measured, tol, time.perf_counter() - t0))
    return results
