"""Parameter-level and Q-level complexity measures, orbit infima and the
gradient-alignment diagnostic."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import numerics
from .dynamics import TrajectoryRecord
from .errors import ValidationError
from .geometry import effective_hessian_q
from .model import Dataset, QCoordinates, Theta, grad_q, q_matrix, vech
from .symmetry import DEGREE

ORBIT_CONST = 3.0 * 2.0 ** (-2.0 / 3.0)


@dataclass(frozen=True)
class ComplexityReport:
    theta_norm_sq: float
    path_like: float
    balanced_energy: float
    q_frobenius: float
    q_nuclear: float
    q_operator: float
    stable_rank: float
    quotient_theta_norm: float
    closure_attained: bool
    singular_values: np.ndarray = field(repr=False)

    def to_row(self) -> dict:
        return {
            "theta_norm_sq": self.theta_norm_sq,
            "path_like": self.path_like,
            "balanced_energy": self.balanced_energy,
            "q_frobenius": self.q_frobenius,
            "q_nuclear": self.q_nuclear,
            "q_operator": self.q_operator,
            "stable_rank": self.stable_rank,
            "quotient_theta_norm": self.quotient_theta_norm,
            "closure_attained": int(self.closure_attained),
            "sv": ";".join(repr(float(s)) for s in self.singular_values),
        }


def unit_orbit_infimum(a: float, w_norm: float) -> float:
    """inf over c > 0 of c^-4 a^2 + c^2 ||w||^2; minimizer c^6 = 2 a^2 / ||w||^2."""
    a, w_norm = abs(float(a)), float(w_norm)
    if a == 0.0 or w_norm == 0.0:
        return 0.0
    return ORBIT_CONST * a ** (2.0 / 3.0) * w_norm ** (4.0 / 3.0)


def quotient_theta_norm(theta: Theta, p: float = DEGREE) -> float:
    """Infimum of sum_i a_i^2 + ||w_i||^2 over the orbit of theta.

    Separates per unit because permutations do not change the norm. Units
    with w = 0 but a != 0 contribute their orbit-closure value 0.
    """
    if p != 2:
        raise ValidationError("closed form available for p = 2 only")
    norms = np.linalg.norm(theta.W, axis=1)
    return float(sum(unit_orbit_infimum(a, r) for a, r in zip(theta.a, norms)))


def numeric_orbit_infimum(unit_cost: Callable[[float, float, float], float], theta: Theta, log_c_range=(-10.0, 10.0), p: float = DEGREE) -> float:
    """Orbit infimum of a separable cost by per-unit golden-section search
    over log c. ``unit_cost(a, w_norm, c)`` is the cost of the rescaled
    unit (c^-p a, c w)."""
    total = 0.0
    for a, r in zip(theta.a, np.linalg.norm(theta.W, axis=1)):
        _, val = numerics.minimize_1d(lambda s: unit_cost(a, r, math.exp(s)), *log_c_range, tol=1e-12)
        total += val
    return total


def complexity_report(theta: Theta, p: float = DEGREE) -> ComplexityReport:
    norms = np.linalg.norm(theta.W, axis=1)
    Q = q_matrix(theta).Q
    sv = np.sort(np.abs(numerics.sym_eig(Q).eigenvalues))[::-1]
    op = float(sv[0]) if sv.size else 0.0
    frob = float(math.sqrt(np.sum(sv**2)))
    return ComplexityReport(
        theta_norm_sq=float(np.sum(theta.a**2) + np.sum(norms**2)),
        path_like=float(np.sum(np.abs(theta.a) * norms)),
        balanced_energy=float(np.sum(np.abs(theta.a) * norms**2)),
        q_frobenius=frob,
        q_nuclear=float(np.sum(sv)),
        q_operator=op,
        stable_rank=frob**2 / op**2 if op > 0 else math.nan,
        quotient_theta_norm=quotient_theta_norm(theta, p),
        closure_attained=bool(np.any((norms == 0) & (theta.a != 0))),
        singular_values=sv,
    )


class RKind(str, enum.Enum):
    LOSS = "loss"
    FROBENIUS_SQ = "frobenius_sq"
    NUCLEAR = "nuclear"
    OPERATOR = "operator"
    CONSTANT = "constant"


def q_functional_gradient(q: QCoordinates, r_kind, data: Dataset | None = None, kind=None, tol: float = 1e-10) -> np.ndarray | None:
    """Euclidean gradient in q-coordinates of a Q-level functional, or None
    where it is not differentiable (nuclear: a zero eigenvalue; operator:
    a tied top |eigenvalue|)."""
    r_kind = RKind(r_kind)
    if r_kind is RKind.LOSS:
        return grad_q(q, data, kind)
    if r_kind is RKind.FROBENIUS_SQ:
        return np.asarray(q.q, dtype=float).copy()
    if r_kind is RKind.CONSTANT:
        return np.zeros_like(q.q)
    spec = numerics.sym_eig(q.Q)
    lam, V = spec.eigenvalues, spec.eigenvectors
    scale = max(1.0, float(np.max(np.abs(lam))))
    if r_kind is RKind.NUCLEAR:
        if np.any(np.abs(lam) <= tol * scale):
            return None
        return vech((V * np.sign(lam)) @ V.T)
    order = np.argsort(-np.abs(lam))
    if lam.size > 1 and abs(abs(lam[order[0]]) - abs(lam[order[1]])) <= tol * scale:
        return None
    v = V[:, order[0]]
    return vech(np.sign(lam[order[0]]) * np.outer(v, v))


def collinearity_diagnostic(traj: TrajectoryRecord, data: Dataset, kind, r_kind) -> list[float | None]:
    """Cosine between grad R and grad L in the Q-chart metric, per snapshot.

    Riemannian gradients are M^+ grad, so the cosine uses the pseudo-inverse
    of the metric M. Entries are None where R is not differentiable or has
    zero gradient.
    """
    out: list[float | None] = []
    for q in traj.q_snapshots:
        _, M, _ = effective_hessian_q(q, data, kind)
        P = numerics.positive_range(M)
        lam = np.diag(P.T @ M @ P)
        gL = grad_q(q, data, kind)
        gR = q_functional_gradient(q, r_kind, data, kind)
        if gR is None:
            out.append(None)
            continue
        cR, cL = P.T @ gR, P.T @ gL
        nR, nL = float(np.sum(cR**2 / lam)), float(np.sum(cL**2 / lam))
        if nR <= 1e-300 or nL <= 1e-300:
            out.append(None)
            continue
        out.append(float(np.sum(cR * cL / lam) / math.sqrt(nR * nL)))
    return out
