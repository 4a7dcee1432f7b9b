"""Quadratic-activation shallow network f(x) = sum_i a_i (w_i . x)^2.

Parameters are flattened as (a_1, w_1, a_2, w_2, ...), so unit i occupies
the slice [i*(d+1), (i+1)*(d+1)) with the output weight first.

Q-coordinates: Q(theta) = sum_i a_i w_i w_i^T, stored as an isometric
half-vectorization q (upper triangle, row-major, off-diagonals times
sqrt(2)), so that <q1, q2> equals the Frobenius product of the matrices.
Predictions are linear in q: f(x) = <vech(x x^T), q>.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import expit

from .errors import ValidationError


class Task(str, enum.Enum):
    REGRESSION = "regression"
    CLASSIFICATION = "classification"


class LossKind(str, enum.Enum):
    SQUARED = "squared"
    LOGISTIC = "logistic"


@dataclass(frozen=True)
class Activation:
    kind: str = "quadratic"
    degree: float = 2.0

    def __post_init__(self):
        if self.kind != "quadratic" or self.degree != 2.0:
            raise ValidationError("only the quadratic activation (degree 2) is implemented")

    def __call__(self, t):
        return np.square(t)


QUADRATIC = Activation()


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Theta:
    """Network parameters: output weights ``a`` (m,) and hidden weights ``W`` (m, d)."""

    a: np.ndarray
    W: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float).reshape(-1)
        W = np.asarray(self.W, dtype=float)
        if W.ndim == 1:
            W = W.reshape(len(a), -1) if len(a) else W.reshape(0, 0)
        if W.ndim != 2 or W.shape[0] != a.shape[0]:
            raise ValidationError(f"shape mismatch: a {a.shape}, W {W.shape}")
        if a.size < 1 or W.shape[1] < 1:
            raise ValidationError("need m >= 1 and d >= 1")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(W))):
            raise ValidationError("parameters must be finite")
        object.__setattr__(self, "a", _frozen(a))
        object.__setattr__(self, "W", _frozen(W))

    @property
    def m(self) -> int:
        return self.W.shape[0]

    @property
    def d(self) -> int:
        return self.W.shape[1]

    @property
    def dim(self) -> int:
        return self.m * (self.d + 1)

    def flat(self) -> np.ndarray:
        return np.concatenate([self.a[:, None], self.W], axis=1).reshape(-1)

    @classmethod
    def from_flat(cls, vec, m: int, d: int) -> "Theta":
        vec = np.asarray(vec, dtype=float)
        if vec.size != m * (d + 1):
            raise ValidationError(f"expected {m * (d + 1)} entries, got {vec.size}")
        blocks = vec.reshape(m, d + 1)
        return cls(blocks[:, 0], blocks[:, 1:])

    def to_dict(self) -> dict:
        return {
            "m": self.m,
            "d": self.d,
            "units": [{"a": float(ai), "w": [float(v) for v in wi]} for ai, wi in zip(self.a, self.W)],
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "Theta":
        try:
            units = obj["units"]
            a = [u["a"] for u in units]
            W = [u["w"] for u in units]
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed Theta JSON: {exc}") from exc
        theta = cls(np.array(a, dtype=float), np.array(W, dtype=float))
        if ("m" in obj and obj["m"] != theta.m) or ("d" in obj and obj["d"] != theta.d):
            raise ValidationError("declared m/d do not match the units")
        return theta

    def __eq__(self, other):
        if not isinstance(other, Theta):
            return NotImplemented
        return np.array_equal(self.a, other.a) and np.array_equal(self.W, other.W)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    task: Task = Task.REGRESSION

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y, dtype=float).reshape(-1)
        task = Task(self.task)
        if X.ndim != 2 or X.shape[0] != y.shape[0] or X.shape[0] < 1:
            raise ValidationError(f"dataset shape mismatch: X {X.shape}, y {y.shape}")
        if task is Task.CLASSIFICATION and not np.all(np.isin(y, (-1.0, 1.0))):
            raise ValidationError("classification labels must be -1 or +1")
        object.__setattr__(self, "X", _frozen(X))
        object.__setattr__(self, "y", _frozen(y))
        object.__setattr__(self, "task", task)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def to_dict(self) -> dict:
        return {"X": self.X.tolist(), "y": self.y.tolist(), "task": self.task.value}

    @classmethod
    def from_dict(cls, obj: dict) -> "Dataset":
        try:
            return cls(np.array(obj["X"], dtype=float), np.array(obj["y"], dtype=float), Task(obj.get("task", "regression")))
        except (KeyError, ValueError, TypeError) as exc:
            if isinstance(exc, ValidationError):
                raise
            raise ValidationError(f"malformed Dataset JSON: {exc}") from exc


# ---------------------------------------------------------------- Q-chart

def sym_dim(d: int) -> int:
    return d * (d + 1) // 2


@lru_cache(maxsize=None)
def _triu(d: int):
    rows, cols = np.triu_indices(d)
    weights = np.where(rows == cols, 1.0, math.sqrt(2.0))
    return rows, cols, weights


def vech(Q) -> np.ndarray:
    """Isometric half-vectorization of a symmetric matrix (or a stack of them)."""
    Q = np.asarray(Q, dtype=float)
    rows, cols, weights = _triu(Q.shape[-1])
    return Q[..., rows, cols] * weights


def unvech(q, d: int | None = None) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if d is None:
        d = int(round((math.sqrt(8 * q.shape[-1] + 1) - 1) / 2))
    if sym_dim(d) != q.shape[-1]:
        raise ValidationError(f"length {q.shape[-1]} is not d(d+1)/2")
    rows, cols, weights = _triu(d)
    Q = np.zeros(q.shape[:-1] + (d, d))
    vals = q / weights
    Q[..., rows, cols] = vals
    Q[..., cols, rows] = vals
    return Q


@dataclass(frozen=True, eq=False)
class QCoordinates:
    Q: np.ndarray
    q: np.ndarray

    @classmethod
    def from_matrix(cls, Q) -> "QCoordinates":
        Q = np.asarray(Q, dtype=float)
        Q = 0.5 * (Q + Q.T)
        return cls(_frozen(Q), _frozen(vech(Q)))

    @classmethod
    def from_vector(cls, q) -> "QCoordinates":
        q = np.asarray(q, dtype=float)
        return cls(_frozen(unvech(q)), _frozen(q))

    @property
    def d(self) -> int:
        return self.Q.shape[0]


def design_matrix(X) -> np.ndarray:
    """Row k is vech(x_k x_k^T), so predictions are design_matrix(X) @ q."""
    X = np.asarray(X, dtype=float)
    return vech(X[:, :, None] * X[:, None, :])


def q_matrix(theta: Theta) -> QCoordinates:
    Q = (theta.W.T * theta.a) @ theta.W
    return QCoordinates.from_matrix(Q)


def q_jacobian(theta: Theta) -> np.ndarray:
    """Jacobian of theta -> vech(Q(theta)), shape (d(d+1)/2, m(d+1))."""
    m, d = theta.m, theta.d
    J = np.zeros((sym_dim(d), theta.dim))
    eye = np.eye(d)
    for i in range(m):
        a, w = theta.a[i], theta.W[i]
        base = i * (d + 1)
        J[:, base] = vech(np.outer(w, w))
        # d/dw_j of a w w^T = a (e_j w^T + w e_j^T)
        outer = eye[:, :, None] * w[None, None, :]
        J[:, base + 1: base + 1 + d] = a * vech(outer + outer.transpose(0, 2, 1)).T
    return J


# ----------------------------------------------------------- realization

def _check_dims(theta: Theta, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != theta.d:
        raise ValidationError(f"input dimension {X.shape} does not match d={theta.d}")
    return X


def realize(theta: Theta, X) -> np.ndarray:
    X = _check_dims(theta, X)
    S = X @ theta.W.T
    return np.square(S) @ theta.a


def jacobian(theta: Theta, X) -> np.ndarray:
    """D Phi_X(theta): row k holds d f(x_k) / d(flattened theta)."""
    X = _check_dims(theta, X)
    n, (m, d) = X.shape[0], theta.W.shape
    S = X @ theta.W.T
    J = np.empty((n, m, d + 1))
    J[:, :, 0] = S**2
    J[:, :, 1:] = 2.0 * (theta.a * S)[:, :, None] * X[:, None, :]
    return J.reshape(n, m * (d + 1))


# ----------------------------------------------------------------- losses

def _validate_kind(data: Dataset, kind) -> LossKind:
    kind = LossKind(kind)
    if kind is LossKind.LOGISTIC and not np.all(np.isin(data.y, (-1.0, 1.0))):
        raise ValidationError("logistic loss needs labels in {-1, +1}")
    return kind


def loss_terms(pred, y, kind) -> tuple[float, np.ndarray, np.ndarray]:
    """Loss value and its first/second derivatives w.r.t. each prediction.

    The 1/n (logistic) and 1/(2n) (squared) normalizations are included.
    """
    kind = LossKind(kind)
    pred = np.asarray(pred, dtype=float)
    n = pred.shape[0]
    if kind is LossKind.SQUARED:
        r = pred - y
        return float(0.5 * np.dot(r, r) / n), r / n, np.full(n, 1.0 / n)
    margin = y * pred
    value = float(np.sum(np.logaddexp(0.0, -margin)) / n)
    s_neg = expit(-margin)
    d1 = -y * s_neg / n
    d2 = s_neg * (1.0 - s_neg) / n
    return value, d1, d2


def loss(theta: Theta, data: Dataset, kind) -> float:
    kind = _validate_kind(data, kind)
    return loss_terms(realize(theta, data.X), data.y, kind)[0]


def loss_q(q: QCoordinates, data: Dataset, kind) -> float:
    kind = _validate_kind(data, kind)
    return loss_terms(design_matrix(data.X) @ q.q, data.y, kind)[0]


def _residual_matrix(X: np.ndarray, d1: np.ndarray) -> np.ndarray:
    return (X.T * d1) @ X


def grad_theta(theta: Theta, data: Dataset, kind) -> np.ndarray:
    kind = _validate_kind(data, kind)
    X = _check_dims(theta, data.X)
    _, d1, _ = loss_terms(realize(theta, X), data.y, kind)
    M = _residual_matrix(X, d1)
    MW = theta.W @ M  # row i: M w_i
    g = np.empty((theta.m, theta.d + 1))
    g[:, 0] = np.einsum("ij,ij->i", MW, theta.W)
    g[:, 1:] = 2.0 * theta.a[:, None] * MW
    return g.reshape(-1)


def hess_theta(theta: Theta, data: Dataset, kind) -> np.ndarray:
    """Exact Hessian: J^T diag(l'') J plus the per-unit curvature of f
    weighted by l' (no cross-unit terms there since f is a sum over units).
    """
    kind = _validate_kind(data, kind)
    X = _check_dims(theta, data.X)
    _, d1, d2 = loss_terms(realize(theta, X), data.y, kind)
    J = jacobian(theta, X)
    H = (J.T * d2) @ J
    M = _residual_matrix(X, d1)
    d = theta.d
    for i in range(theta.m):
        base = i * (d + 1)
        Mw = 2.0 * M @ theta.W[i]
        H[base, base + 1: base + 1 + d] += Mw
        H[base + 1: base + 1 + d, base] += Mw
        H[base + 1: base + 1 + d, base + 1: base + 1 + d] += 2.0 * theta.a[i] * M
    return 0.5 * (H + H.T)


def grad_q(q: QCoordinates, data: Dataset, kind) -> np.ndarray:
    kind = _validate_kind(data, kind)
    A = design_matrix(data.X)
    _, d1, _ = loss_terms(A @ q.q, data.y, kind)
    return A.T @ d1


def hess_q(q: QCoordinates, data: Dataset, kind) -> np.ndarray:
    kind = _validate_kind(data, kind)
    A = design_matrix(data.X)
    _, _, d2 = loss_terms(A @ q.q, data.y, kind)
    H = (A.T * d2) @ A
    return 0.5 * (H + H.T)


def minimize_q(data: Dataset, kind, q0=None, tol: float = 1e-13, max_iter: int = 200) -> tuple[QCoordinates, float]:
    """Minimize the (convex) loss over all of Sym(d) with damped Newton steps.

    Used as a reference optimum; pseudo-inverse steps handle a rank-deficient
    design. Returns the minimizer found and its loss.
    """
    kind = _validate_kind(data, kind)
    A = design_matrix(data.X)
    q = np.zeros(A.shape[1]) if q0 is None else np.asarray(q0, dtype=float).copy()
    value, d1, d2 = loss_terms(A @ q, data.y, kind)
    for _ in range(max_iter):
        g = A.T @ d1
        H = (A.T * d2) @ A
        step = np.linalg.lstsq(H, g, rcond=1e-12)[0]
        t = 1.0
        while True:
            cand = q - t * step
            cval, c1, c2 = loss_terms(A @ cand, data.y, kind)
            if cval <= value or t < 1e-10:
                break
            t *= 0.5
        decrease = value - cval
        q, value, d1, d2 = cand, cval, c1, c2
        if decrease <= tol * max(1.0, abs(value)):
            break
    return QCoordinates.from_vector(q), value
