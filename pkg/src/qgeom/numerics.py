"""Dense small-matrix kernels: spectra, nullspaces, subspace angles,
finite-difference oracles and a golden-section line search.

Everything here works in float64 on matrices small enough for direct
factorizations (dimension up to a few hundred).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg

from .errors import ValidationError

SYM_TOL = 1e-10
SIGN_TOL = 1e-12
DEFAULT_RANK_TOL = 1e-8
RANGE_TOL = 1e-10


@dataclass(frozen=True)
class SymSpectrum:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def __len__(self) -> int:
        return len(self.eigenvalues)


@dataclass(frozen=True)
class SubspaceBasis:
    columns: np.ndarray
    dim: int
    tol_used: float

    @property
    def ambient_dim(self) -> int:
        return self.columns.shape[0]

    def projector(self) -> np.ndarray:
        return self.columns @ self.columns.T


def _as_matrix(A, name: str = "A") -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim != 2:
        raise ValidationError(f"{name} must be a 2-D matrix, got shape {A.shape}")
    return A


def _fix_signs(V: np.ndarray) -> np.ndarray:
    """Flip columns so the first entry with |v| > SIGN_TOL is positive."""
    V = V.copy()
    for j in range(V.shape[1]):
        col = V[:, j]
        idx = np.flatnonzero(np.abs(col) > SIGN_TOL)
        if idx.size and col[idx[0]] < 0:
            V[:, j] = -col
    return V


def check_symmetric(A, tol: float = SYM_TOL, name: str = "A") -> np.ndarray:
    A = _as_matrix(A, name)
    if A.shape[0] != A.shape[1]:
        raise ValidationError(f"{name} must be square, got shape {A.shape}")
    asym = float(np.max(np.abs(A - A.T))) if A.size else 0.0
    scale = max(1.0, float(np.max(np.abs(A)))) if A.size else 1.0
    if asym > tol * scale:
        raise ValidationError(f"{name} is not symmetric: max asymmetry {asym:.3e}")
    return 0.5 * (A + A.T)


def sym_eig(A) -> SymSpectrum:
    """Full eigendecomposition of a symmetric matrix, ascending order.

    Eigenvectors follow the convention that their first nonzero entry is
    positive, so repeated calls give identical output.
    """
    A = check_symmetric(A)
    w, V = np.linalg.eigh(A)
    return SymSpectrum(w, _fix_signs(V))


def nullspace(A, tol: float = DEFAULT_RANK_TOL) -> SubspaceBasis:
    """Orthonormal basis of right singular vectors with sigma <= tol * sigma_max."""
    if tol <= 0:
        raise ValidationError("tol must be positive")
    A = _as_matrix(A)
    n_cols = A.shape[1]
    if A.shape[0] == 0 or not np.any(A):
        return SubspaceBasis(np.eye(n_cols), n_cols, tol)
    _, s, Vt = np.linalg.svd(A, full_matrices=True)
    rank = int(np.sum(s > tol * s[0]))
    basis = _fix_signs(Vt[rank:].T)
    return SubspaceBasis(basis, n_cols - rank, tol)


def orthonormal_span(vectors, tol: float = DEFAULT_RANK_TOL) -> SubspaceBasis:
    """Orthonormal basis of the span of the given columns (relative rank tol)."""
    V = _as_matrix(vectors, "vectors")
    if V.shape[1] == 0 or not np.any(V):
        return SubspaceBasis(np.zeros((V.shape[0], 0)), 0, tol)
    U, s, _ = np.linalg.svd(V, full_matrices=False)
    rank = int(np.sum(s > tol * s[0]))
    return SubspaceBasis(_fix_signs(U[:, :rank]), rank, tol)


def orthogonal_complement(basis: SubspaceBasis) -> SubspaceBasis:
    n = basis.ambient_dim
    if basis.dim == 0:
        return SubspaceBasis(np.eye(n), n, basis.tol_used)
    Q, _ = np.linalg.qr(basis.columns, mode="complete")
    comp = _fix_signs(Q[:, basis.dim:])
    return SubspaceBasis(comp, n - basis.dim, basis.tol_used)


def principal_angles(U: SubspaceBasis, W: SubspaceBasis) -> np.ndarray:
    """Principal angles between two subspaces, ascending, in [0, pi/2].

    Large angles come from the cosines (singular values of U^T W); angles
    below pi/4 are recomputed from sines, which keeps small angles accurate
    to machine precision instead of ~1e-8.
    """
    if U.ambient_dim != W.ambient_dim:
        raise ValidationError(
            f"ambient dimension mismatch: {U.ambient_dim} vs {W.ambient_dim}"
        )
    k = min(U.dim, W.dim)
    if k == 0:
        return np.zeros(0)
    A, B = (U.columns, W.columns) if U.dim >= W.dim else (W.columns, U.columns)
    cos = np.clip(np.linalg.svd(A.T @ B, compute_uv=False), -1.0, 1.0)[:k]
    angles = np.arccos(cos)
    resid = B - A @ (A.T @ B)
    sin = np.clip(np.sort(np.linalg.svd(resid, compute_uv=False))[:k], -1.0, 1.0)
    small = cos**2 >= 0.5
    angles[small] = np.arcsin(sin[small])
    return np.sort(angles)


def gen_sym_eig(A, B) -> SymSpectrum:
    """Eigenvalues of the symmetric pencil (A, B) with B positive definite.

    The eigenvectors are B-orthonormal.
    """
    A = check_symmetric(A, name="A")
    B = check_symmetric(B, name="B")
    if A.shape != B.shape:
        raise ValidationError(f"shape mismatch: {A.shape} vs {B.shape}")
    bw = np.linalg.eigvalsh(B)
    if bw.size and (bw[-1] <= 0 or bw[0] <= 1e-12 * bw[-1]):
        raise ValidationError(f"B is not positive definite: lambda_min(B) = {bw[0]:.3e}")
    w, V = scipy.linalg.eigh(A, B)
    return SymSpectrum(w, _fix_signs(V))


def positive_range(B, rel_tol: float = RANGE_TOL) -> np.ndarray:
    """Orthonormal basis of the eigenspace of B with eigenvalues > rel_tol * lambda_max."""
    spec = sym_eig(B)
    lam = spec.eigenvalues
    if lam.size == 0 or lam[-1] <= 0:
        return np.zeros((len(lam), 0))
    keep = lam > rel_tol * lam[-1]
    return spec.eigenvectors[:, keep]


def gen_sym_eig_on_range(A, B, rel_tol: float = RANGE_TOL) -> SymSpectrum:
    """Pencil spectrum after restricting both matrices to the positive
    eigenspace of a PSD (possibly singular) B.

    Eigenvectors are returned in ambient coordinates.
    """
    A = check_symmetric(A, name="A")
    P = positive_range(B, rel_tol)
    if P.shape[1] == 0:
        raise ValidationError("metric is numerically zero")
    spec = gen_sym_eig(P.T @ A @ P, P.T @ check_symmetric(B, name="B") @ P)
    return SymSpectrum(spec.eigenvalues, P @ spec.eigenvectors)


def default_step(x) -> float:
    return 1e-5 * max(1.0, float(np.max(np.abs(x))) if np.size(x) else 1.0)


def fd_gradient(f: Callable[[np.ndarray], float], x, h: float | None = None) -> np.ndarray:
    """Central-difference gradient, one coordinate at a time."""
    x = np.asarray(x, dtype=float)
    h = default_step(x) if h is None else h
    if h <= 0:
        raise ValidationError("h must be positive")
    g = np.empty_like(x)
    flat_x, flat_g = x.reshape(-1), g.reshape(-1)
    for i in range(flat_x.size):
        e = np.zeros_like(flat_x)
        e[i] = h
        flat_g[i] = (f((flat_x + e).reshape(x.shape)) - f((flat_x - e).reshape(x.shape))) / (2 * h)
    return g


def fd_jacobian(F: Callable[[np.ndarray], np.ndarray], x, h: float | None = None) -> np.ndarray:
    """Central-difference Jacobian; column i is dF/dx_i."""
    x = np.asarray(x, dtype=float).reshape(-1)
    h = default_step(x) if h is None else h
    if h <= 0:
        raise ValidationError("h must be positive")
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        cols.append((np.asarray(F(x + e), dtype=float) - np.asarray(F(x - e), dtype=float)).reshape(-1) / (2 * h))
    return np.stack(cols, axis=1) if cols else np.zeros((0, 0))


_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


def minimize_1d(f: Callable[[float], float], lo: float, hi: float, tol: float = 1e-10) -> tuple[float, float]:
    """Golden-section search for the minimizer of a unimodal f on [lo, hi]."""
    if not lo < hi:
        raise ValidationError(f"invalid bracket [{lo}, {hi}]")
    a, b = float(lo), float(hi)
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INV_PHI * (b - a)
            fd = f(d)
    x = 0.5 * (a + b)
    candidates = [(f(x), x), (fc, c), (fd, d)]
    fx, x = min(candidates)
    return x, fx
