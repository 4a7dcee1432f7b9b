"""The symmetry group S_m x| (R_>0)^m acting on network parameters.

Composite convention: permute first, then scale per target slot, so unit i
of ``g . theta`` is ``(c_i^-p a_j, c_i w_j)`` with ``j = perm[i]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .model import Theta

DEGREE = 2.0


@dataclass(frozen=True, eq=False)
class GroupElement:
    perm: np.ndarray  # 0-based; JSON uses 1-based
    scales: np.ndarray

    def __post_init__(self):
        perm = np.asarray(self.perm, dtype=int).reshape(-1)
        scales = np.asarray(self.scales, dtype=float).reshape(-1)
        if perm.shape != scales.shape:
            raise ValidationError(f"perm has {perm.size} entries but scales has {scales.size}")
        if not np.array_equal(np.sort(perm), np.arange(perm.size)):
            raise ValidationError(f"not a permutation: {perm.tolist()}")
        if not np.all(np.isfinite(scales)) or np.any(scales <= 0):
            raise ValidationError(f"scales must be finite and positive, got {scales.tolist()}")
        perm.setflags(write=False)
        scales.setflags(write=False)
        object.__setattr__(self, "perm", perm)
        object.__setattr__(self, "scales", scales)

    @property
    def m(self) -> int:
        return self.perm.size

    @classmethod
    def identity(cls, m: int) -> "GroupElement":
        return cls(np.arange(m), np.ones(m))

    @classmethod
    def permutation(cls, perm) -> "GroupElement":
        perm = np.asarray(perm, dtype=int)
        return cls(perm, np.ones(perm.size))

    @classmethod
    def scaling(cls, scales) -> "GroupElement":
        scales = np.asarray(scales, dtype=float)
        return cls(np.arange(scales.size), scales)

    def compose(self, other: "GroupElement") -> "GroupElement":
        """``self o other``: acting with the result equals acting with
        ``other`` first and then ``self``."""
        if other.m != self.m:
            raise ValidationError("group elements of different sizes")
        return GroupElement(other.perm[self.perm], self.scales * other.scales[self.perm])

    def inverse(self) -> "GroupElement":
        inv = np.argsort(self.perm)
        return GroupElement(inv, 1.0 / self.scales[inv])

    def to_dict(self) -> dict:
        return {"perm": [int(i) + 1 for i in self.perm], "scales": [float(c) for c in self.scales]}

    @classmethod
    def from_dict(cls, obj: dict) -> "GroupElement":
        try:
            return cls(np.asarray(obj["perm"], dtype=int) - 1, np.asarray(obj["scales"], dtype=float))
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed GroupElement JSON: {exc}") from exc


def apply_group(g: GroupElement, theta: Theta, p: float = DEGREE) -> Theta:
    if g.m != theta.m:
        raise ValidationError(f"group element acts on {g.m} units, theta has {theta.m}")
    c = g.scales
    return Theta(c ** (-p) * theta.a[g.perm], c[:, None] * theta.W[g.perm])


@dataclass(frozen=True)
class OrbitTangentBasis:
    vectors: np.ndarray  # shape (m, m(d+1)); row i is the tangent of unit i's scaling

    def __len__(self) -> int:
        return self.vectors.shape[0]


def orbit_tangent_basis(theta: Theta, p: float = DEGREE) -> OrbitTangentBasis:
    m, d = theta.m, theta.d
    V = np.zeros((m, m, d + 1))
    idx = np.arange(m)
    V[idx, idx, 0] = -p * theta.a
    V[idx, idx, 1:] = theta.W
    return OrbitTangentBasis(V.reshape(m, m * (d + 1)))


def vertical_projection(theta: Theta, v, p: float = DEGREE) -> np.ndarray:
    """Euclidean projection of v onto the orbit tangent span.

    The tangent vectors have disjoint supports, hence are mutually
    orthogonal and the projection decouples per unit.
    """
    T = orbit_tangent_basis(theta, p).vectors
    norms = np.einsum("ij,ij->i", T, T)
    coef = np.divide(T @ v, norms, out=np.zeros_like(norms), where=norms > 0)
    return coef @ T


def random_orbit_element(m: int, scale_log_range=(0.0, 0.0), rng_seed=0) -> GroupElement:
    """Uniform random permutation with log-uniform positive scales."""
    lo, hi = (float(v) for v in scale_log_range)
    if lo > hi:
        raise ValidationError(f"empty scale range ({lo}, {hi})")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    perm = rng.permutation(m)
    scales = np.exp(rng.uniform(lo, hi, size=m)) if hi > lo else np.full(m, np.exp(lo))
    return GroupElement(perm, scales)


def _weight_norms(theta: Theta) -> np.ndarray:
    norms = np.linalg.norm(theta.W, axis=1)
    bad = np.flatnonzero(norms <= 1e-12)
    if bad.size:
        raise ValidationError(f"unit {int(bad[0])} has a vanishing weight vector")
    return norms


def gauge_normalize(theta: Theta, p: float = DEGREE) -> Theta:
    """Representative with unit-norm hidden weights in the same orbit."""
    norms = _weight_norms(theta)
    return Theta(theta.a * norms**p, theta.W / norms[:, None])


def canonical_representative(theta: Theta, p: float = DEGREE) -> Theta:
    """Deterministic orbit representative.

    Gauge-normalizes, flips each w_i so its first significant entry is
    positive (valid only because the quadratic activation is even), then
    sorts units lexicographically by (a, w).
    """
    g = gauge_normalize(theta, p)
    W = g.W.copy()
    for i in range(W.shape[0]):
        idx = np.flatnonzero(np.abs(W[i]) > 1e-12)
        if idx.size and W[i, idx[0]] < 0:
            W[i] = -W[i]
    keys = np.concatenate([g.a[:, None], W], axis=1)
    order = np.lexsort(keys.T[::-1])
    return Theta(g.a[order], W[order])
