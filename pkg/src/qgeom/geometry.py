"""Pointwise quotient geometry of the quadratic network.

The vertical space is the span of the scaling-orbit tangents and the
horizontal space its Euclidean complement. For m >= 2 the Jacobian kernel
is generically larger than the orbit span: Q = sum a_i w_i w_i^T is also
unchanged by continuous pseudo-orthogonal mixing of units. The function
metric restricted to the horizontal space is then singular, and the
lift/Hessian routines work on its positive range unless ``strict=True``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import numerics
from .errors import SingularMetricError, ValidationError
from .model import (
    Dataset,
    QCoordinates,
    Theta,
    design_matrix,
    grad_theta,
    hess_q,
    hess_theta,
    jacobian,
    sym_dim,
)
from .symmetry import DEGREE, orbit_tangent_basis

__all__ = [
    "jacobian",
    "GeometryAtPoint",
    "decompose",
    "UnitFlags",
    "RegularityReport",
    "regularity_check",
    "generic_kernel_dim",
    "horizontal_lift_gradient",
    "CurvatureSummary",
    "curvature_summary",
    "effective_hessian_q",
    "projected_hessian_spectrum",
    "GaugeSlice",
    "gauge_slice",
    "christoffel_symbols",
    "slice_metric",
    "reduced_hessian_gauge",
]

COLLISION_TOL = 1e-8
DEFAULT_ANGLE_TOL = 1e-6


@dataclass(frozen=True)
class GeometryAtPoint:
    jacobian: np.ndarray
    vertical: numerics.SubspaceBasis
    horizontal: numerics.SubspaceBasis
    metric: np.ndarray
    kernel: numerics.SubspaceBasis

    @property
    def n(self) -> int:
        return self.jacobian.shape[0]

    def vertical_projector(self) -> np.ndarray:
        return self.vertical.projector()

    def horizontal_projector(self) -> np.ndarray:
        return self.horizontal.projector()

    def restricted_metric(self) -> np.ndarray:
        B = self.horizontal.columns
        R = B.T @ self.metric @ B
        return 0.5 * (R + R.T)


def decompose(theta: Theta, X, p: float = DEGREE, tol: float = numerics.DEFAULT_RANK_TOL) -> GeometryAtPoint:
    if tol <= 0:
        raise ValidationError("tol must be positive")
    J = jacobian(theta, X)
    vertical = numerics.orthonormal_span(orbit_tangent_basis(theta, p).vectors.T, tol)
    horizontal = numerics.orthogonal_complement(vertical)
    G = J.T @ J / J.shape[0]
    return GeometryAtPoint(J, vertical, horizontal, 0.5 * (G + G.T), numerics.nullspace(J, tol))


@dataclass(frozen=True)
class UnitFlags:
    vanishing_a: bool = False
    vanishing_w: bool = False
    collision_with: int | None = None

    @property
    def any(self) -> bool:
        return self.vanishing_a or self.vanishing_w or self.collision_with is not None


@dataclass(frozen=True)
class RegularityReport:
    kernel_dim: int
    orbit_dim: int
    max_principal_angle: float
    unit_flags: list[UnitFlags]
    is_regular: bool
    locally_free: bool
    generic_kernel_dim: int

    def to_dict(self) -> dict:
        return {
            "kernel_dim": self.kernel_dim,
            "orbit_dim": self.orbit_dim,
            "max_principal_angle": self.max_principal_angle,
            "is_regular": self.is_regular,
            "locally_free": self.locally_free,
            "generic_kernel_dim": self.generic_kernel_dim,
            "unit_flags": [
                {"vanishing_a": f.vanishing_a, "vanishing_w": f.vanishing_w, "collision_with": f.collision_with}
                for f in self.unit_flags
            ],
        }


def generic_kernel_dim(m: int, d: int, n: int) -> int:
    """Kernel dimension of the sample Jacobian at a generic point.

    The rank equals the dimension of the stratum of symmetric matrices the
    network can reach (rank <= m), capped by the number of samples.
    """
    stratum = m * d - m * (m - 1) // 2 if m <= d else sym_dim(d)
    return m * (d + 1) - min(n, stratum)


def _unit_flags(theta: Theta) -> list[UnitFlags]:
    scale = max(1.0, float(np.max(np.abs(theta.flat()))))
    vanish = 1e-10 * scale
    norms = np.linalg.norm(theta.W, axis=1)
    flags = []
    for i in range(theta.m):
        partner = None
        if norms[i] > vanish:
            for j in range(theta.m):
                if j != i and norms[j] > vanish:
                    cos = abs(float(theta.W[i] @ theta.W[j])) / (norms[i] * norms[j])
                    if cos > 1.0 - COLLISION_TOL:
                        partner = j
                        break
        flags.append(UnitFlags(bool(abs(theta.a[i]) <= vanish), bool(norms[i] <= vanish), partner))
    return flags


def regularity_check(
    theta: Theta,
    X,
    p: float = DEGREE,
    tol: float = numerics.DEFAULT_RANK_TOL,
    angle_tol: float = DEFAULT_ANGLE_TOL,
) -> RegularityReport:
    """Compare the Jacobian kernel with the orbit tangent span and flag
    vanishing or colliding units (anti-parallel weights collide too, since
    the activation is even)."""
    geom = decompose(theta, X, p, tol)
    angles = numerics.principal_angles(geom.kernel, geom.vertical)
    max_angle = float(angles.max()) if angles.size else 0.0
    flags = _unit_flags(theta)
    flagged = any(f.any for f in flags)
    regular = geom.kernel.dim == geom.vertical.dim and max_angle <= angle_tol and not flagged
    return RegularityReport(
        kernel_dim=geom.kernel.dim,
        orbit_dim=geom.vertical.dim,
        max_principal_angle=max_angle,
        unit_flags=flags,
        is_regular=bool(regular),
        locally_free=bool(geom.vertical.dim == theta.m and not flagged),
        generic_kernel_dim=generic_kernel_dim(theta.m, theta.d, geom.n),
    )


def _solve_on_range(R: np.ndarray, b: np.ndarray, strict: bool, what: str) -> np.ndarray:
    spec = numerics.sym_eig(R)
    lam, V = spec.eigenvalues, spec.eigenvectors
    lam_max = float(lam[-1]) if lam.size else 0.0
    lam_min = float(lam[0]) if lam.size else 0.0
    if lam_max <= 0.0:
        raise SingularMetricError(f"{what} is numerically zero", lam_min)
    keep = lam > numerics.RANGE_TOL * lam_max
    if strict and not np.all(keep):
        raise SingularMetricError(f"{what} is singular: lambda_min = {lam_min:.3e}", lam_min)
    Vk = V[:, keep]
    return Vk @ ((Vk.T @ b) / lam[keep])


def horizontal_lift_gradient(
    theta: Theta,
    data: Dataset,
    kind,
    geom: GeometryAtPoint | None = None,
    strict: bool = False,
) -> np.ndarray:
    """Horizontal vector u with g(u, v) = <grad L, v> for every horizontal v.

    Solves (B^T G B) z = B^T grad L and returns B z. When the restricted
    metric is singular (generic for m >= 2) the minimum-norm solution on its
    positive range is taken; ``strict=True`` raises instead.
    """
    if geom is None:
        geom = decompose(theta, data.X)
    B = geom.horizontal.columns
    g = grad_theta(theta, data, kind)
    z = _solve_on_range(geom.restricted_metric(), B.T @ g, strict, "restricted metric")
    return B @ z


@dataclass(frozen=True)
class CurvatureSummary:
    lambda_min_eff: float
    lambda_max_eff: float
    kappa_eff: float
    kappa_defined: bool
    trace: float
    frobenius: float
    spectrum: np.ndarray = field(repr=False)

    def to_dict(self) -> dict:
        return {
            "lambda_min_eff": self.lambda_min_eff,
            "lambda_max_eff": self.lambda_max_eff,
            "kappa_eff": self.kappa_eff,
            "kappa_defined": self.kappa_defined,
            "trace": self.trace,
            "frobenius": self.frobenius,
            "spectrum": [float(v) for v in self.spectrum],
        }


def curvature_summary(spectrum, hess) -> CurvatureSummary:
    spectrum = np.asarray(spectrum, dtype=float)
    lo, hi = float(spectrum[0]), float(spectrum[-1])
    defined = lo > 0
    return CurvatureSummary(
        lambda_min_eff=lo,
        lambda_max_eff=hi,
        kappa_eff=hi / lo if defined else math.inf,
        kappa_defined=defined,
        trace=float(np.trace(hess)),
        frobenius=float(np.linalg.norm(hess)),
        spectrum=spectrum,
    )


def effective_hessian_q(q: QCoordinates, data: Dataset, kind) -> tuple[np.ndarray, np.ndarray, CurvatureSummary]:
    """Loss Hessian and function metric in the Q-chart, plus the pencil
    spectrum on the metric's positive range."""
    H = hess_q(q, data, kind)
    A = design_matrix(data.X)
    M = A.T @ A / data.n
    M = 0.5 * (M + M.T)
    if not np.any(M):
        raise SingularMetricError("Q-chart metric is numerically zero", 0.0)
    spec = numerics.gen_sym_eig_on_range(H, M)
    return H, M, curvature_summary(spec.eigenvalues, H)


def projected_hessian_spectrum(theta: Theta, data: Dataset, kind, geom: GeometryAtPoint | None = None) -> np.ndarray:
    """Spectrum of P_hor H P_hor on the horizontal subspace.

    A proxy obtained by deleting the scaling-orbit directions; it is not
    the intrinsic effective Hessian.
    """
    if geom is None:
        geom = decompose(theta, data.X)
    B = geom.horizontal.columns
    return numerics.sym_eig(B.T @ hess_theta(theta, data, kind) @ B).eigenvalues


# ------------------------------------------------------------- gauge slice

def _tangent_frame(w: np.ndarray) -> np.ndarray:
    """Orthonormal basis of w^perp by pivoted Gram-Schmidt over e_1..e_d.

    Each round takes the standard basis vector with the largest residual,
    lowest index on ties.
    """
    d = w.size
    accepted = [w / np.linalg.norm(w)]
    frame = []
    eye = np.eye(d)
    for _ in range(d - 1):
        Q = np.array(accepted).T
        resid = eye - Q @ (Q.T @ eye)
        norms = np.linalg.norm(resid, axis=0)
        j = int(np.argmax(norms))
        v = resid[:, j] / norms[j]
        v = v - Q @ (Q.T @ v)
        v /= np.linalg.norm(v)
        accepted.append(v)
        frame.append(v)
    return np.array(frame).T if frame else np.zeros((d, 0))


@dataclass(frozen=True)
class GaugeSlice:
    """Coordinates on the slice {||w_i|| = 1} around a base point.

    Per unit the coordinates are (a_i, z_i) with z_i in R^(d-1); the
    hidden weight is (w_i0 + E_i z_i) / ||w_i0 + E_i z_i||.
    """

    base: Theta
    frames: tuple

    @property
    def m(self) -> int:
        return self.base.m

    @property
    def d(self) -> int:
        return self.base.d

    @property
    def dim(self) -> int:
        return self.m * self.d

    def origin(self) -> np.ndarray:
        z = np.zeros((self.m, self.d))
        z[:, 0] = self.base.a
        return z.reshape(-1)

    def theta(self, z) -> Theta:
        z = np.asarray(z, dtype=float).reshape(self.m, self.d)
        W = np.empty((self.m, self.d))
        for i, E in enumerate(self.frames):
            u = self.base.W[i] + E @ z[i, 1:]
            W[i] = u / np.linalg.norm(u)
        return Theta(z[:, 0], W)

    def theta_jacobian(self, z) -> np.ndarray:
        """d(flattened theta)/dz, shape (m(d+1), m d)."""
        z = np.asarray(z, dtype=float).reshape(self.m, self.d)
        m, d = self.m, self.d
        D = np.zeros((m * (d + 1), m * d))
        for i, E in enumerate(self.frames):
            u = self.base.W[i] + E @ z[i, 1:]
            r = np.linalg.norm(u)
            w = u / r
            D[i * (d + 1), i * d] = 1.0
            D[i * (d + 1) + 1: (i + 1) * (d + 1), i * d + 1: (i + 1) * d] = (np.eye(d) - np.outer(w, w)) @ E / r
        return D


def gauge_slice(theta: Theta) -> GaugeSlice:
    norms = np.linalg.norm(theta.W, axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-10):
        raise ValidationError("theta is not on the gauge slice (||w_i|| = 1 required)")
    return GaugeSlice(theta, tuple(_tangent_frame(w) for w in theta.W))


def slice_metric(chart: GaugeSlice, X, z=None) -> np.ndarray:
    z = chart.origin() if z is None else z
    JS = jacobian(chart.theta(z), X) @ chart.theta_jacobian(z)
    G = JS.T @ JS / JS.shape[0]
    return 0.5 * (G + G.T)


def _slice_gradient(chart: GaugeSlice, data: Dataset, kind, z) -> np.ndarray:
    return chart.theta_jacobian(z).T @ grad_theta(chart.theta(z), data, kind)


def _metric_inverse(G: np.ndarray, strict: bool) -> np.ndarray:
    spec = numerics.sym_eig(G)
    lam, V = spec.eigenvalues, spec.eigenvectors
    lam_max = float(lam[-1]) if lam.size else 0.0
    if lam_max <= 0:
        raise SingularMetricError("slice metric is numerically zero", float(lam[0]) if lam.size else 0.0)
    keep = lam > numerics.RANGE_TOL * lam_max
    if strict and not np.all(keep):
        raise SingularMetricError(
            f"slice metric is singular (lambda_min = {lam[0]:.3e}): slice not transverse or too few samples",
            float(lam[0]),
        )
    Vk = V[:, keep]
    return (Vk / lam[keep]) @ Vk.T


def christoffel_symbols(
    metric_fn: Callable[[np.ndarray], np.ndarray],
    z,
    h: float = 1e-4,
    strict: bool = False,
) -> np.ndarray:
    """Gamma[k, i, j] of the Levi-Civita connection, metric derivatives by
    central differences with step h."""
    z = np.asarray(z, dtype=float)
    r = z.size
    G = metric_fn(z)
    dG = np.empty((r, r, r))  # dG[l] = d g / d z_l
    for l in range(r):
        e = np.zeros(r)
        e[l] = h
        dG[l] = (metric_fn(z + e) - metric_fn(z - e)) / (2 * h)
    # lower[l, i, j] = 1/2 (d_i g_jl + d_j g_il - d_l g_ij)
    lower = 0.5 * (dG.transpose(2, 0, 1) + dG.transpose(2, 1, 0) - dG)
    return np.einsum("kl,lij->kij", _metric_inverse(G, strict), lower)


def reduced_hessian_gauge(
    theta: Theta,
    data: Dataset,
    kind,
    chart: GaugeSlice | None = None,
    h: float = 1e-4,
    strict: bool = False,
) -> np.ndarray:
    """Christoffel-corrected Hessian of the loss in gauge-slice coordinates.

    Second derivatives come from central differences of the analytic slice
    gradient; the connection is that of the pulled-back function metric.
    """
    chart = gauge_slice(theta) if chart is None else chart
    z0 = chart.origin()
    r = z0.size
    grad = _slice_gradient(chart, data, kind, z0)
    H = np.empty((r, r))
    for j in range(r):
        e = np.zeros(r)
        e[j] = h
        H[:, j] = (_slice_gradient(chart, data, kind, z0 + e) - _slice_gradient(chart, data, kind, z0 - e)) / (2 * h)
    H = 0.5 * (H + H.T)
    gamma = christoffel_symbols(lambda z: slice_metric(chart, data.X, z), z0, h, strict)
    corrected = H - np.einsum("kij,k->ij", gamma, grad)
    return 0.5 * (corrected + corrected.T)


def q_chart_christoffel(data: Dataset, q: QCoordinates, h: float = 1e-4) -> np.ndarray:
    """Christoffel symbols of the Q-chart metric via the same FD machinery.

    The metric is evaluated as the pullback of the prediction map at each
    point, so any dependence on q would show up here.
    """
    A = design_matrix(data.X)

    def metric(qv):
        # Jacobian of q -> predictions, by differencing the realization
        J = numerics.fd_jacobian(lambda v: A @ v, qv, h)
        return J.T @ J / data.n

    return christoffel_symbols(metric, np.asarray(q.q, dtype=float), h)
