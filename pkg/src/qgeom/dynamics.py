"""Trajectories: Euclidean gradient descent, the horizontally lifted
quotient gradient flow, decay-rate fits and convergence certificates."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import numerics
from .errors import SingularMetricError, TrainingError, ValidationError
from .geometry import decompose, effective_hessian_q
from .model import (
    Dataset,
    LossKind,
    QCoordinates,
    Theta,
    grad_q,
    grad_theta,
    jacobian,
    loss,
    loss_q,
    minimize_q,
    q_matrix,
    realize,
)
from .symmetry import DEGREE, vertical_projection


@dataclass
class TrajectoryRecord:
    times: list[float] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)
    grad_norms: list[float] = field(default_factory=list)
    vertical_speed: list[float] = field(default_factory=list)
    horizontal_speed: list[float] = field(default_factory=list)
    snapshot_times: list[float] = field(default_factory=list)
    thetas: list[Theta] = field(default_factory=list)
    q_snapshots: list[QCoordinates] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.times)

    @property
    def final_theta(self) -> Theta:
        return self.thetas[-1]

    def snapshot(self, t: float, theta: Theta) -> None:
        self.snapshot_times.append(t)
        self.thetas.append(theta)
        self.q_snapshots.append(q_matrix(theta))

    def scalar_rows(self) -> list[dict]:
        return [
            {"time": t, "loss": l, "grad_norm": g, "vertical_speed": v, "horizontal_speed": h}
            for t, l, g, v, h in zip(self.times, self.losses, self.grad_norms, self.vertical_speed, self.horizontal_speed)
        ]


def _split_speeds(theta: Theta, velocity: np.ndarray, p: float) -> tuple[float, float]:
    vert = vertical_projection(theta, velocity, p)
    return float(np.linalg.norm(vert)), float(np.linalg.norm(velocity - vert))


def gradient_descent(
    theta0: Theta,
    data: Dataset,
    kind,
    step: float,
    steps: int,
    record_stride: int = 10,
    stop_loss: float | None = None,
    track_speeds: bool = True,
    p: float = DEGREE,
) -> TrajectoryRecord:
    """theta_{k+1} = theta_k - step * grad L(theta_k).

    Per-step scalars are always kept; parameter snapshots every
    ``record_stride`` steps plus the last iterate. With ``stop_loss`` the
    run ends at the first iterate whose loss is at or below it.
    """
    if step <= 0:
        raise ValidationError("step must be positive")
    if record_stride < 1:
        raise ValidationError("record_stride must be >= 1")
    kind = LossKind(kind)
    m, d = theta0.m, theta0.d
    rec = TrajectoryRecord()
    x = theta0.flat()
    theta = theta0
    for k in range(steps + 1):
        with np.errstate(over="ignore", invalid="ignore"):
            value = loss(theta, data, kind)
            g = grad_theta(theta, data, kind)
        if not (math.isfinite(value) and np.all(np.isfinite(g))):
            raise TrainingError(f"non-finite loss at step {k} (step size {step:g} too large?)", step=k, final_loss=value)
        t = k * step
        rec.times.append(t)
        rec.losses.append(value)
        rec.grad_norms.append(float(np.linalg.norm(g)))
        if track_speeds:
            v, h = _split_speeds(theta, -g, p)
        else:
            v = h = math.nan
        rec.vertical_speed.append(v)
        rec.horizontal_speed.append(h)
        done = k == steps or (stop_loss is not None and value <= stop_loss)
        if k % record_stride == 0 or done:
            rec.snapshot(t, theta)
        if done:
            break
        x = x - step * g
        if not np.all(np.isfinite(x)):
            raise TrainingError(f"parameters became non-finite at step {k + 1}", step=k + 1, final_loss=value)
        theta = Theta.from_flat(x, m, d)
    return rec


def gradient_descent_q(q0: QCoordinates, data: Dataset, kind, step: float, steps: int) -> tuple[list[float], list[QCoordinates]]:
    """Plain Euclidean gradient descent directly on the Q-coordinates."""
    if step <= 0:
        raise ValidationError("step must be positive")
    q = np.asarray(q0.q, dtype=float)
    losses, path = [], []
    for _ in range(steps + 1):
        cur = QCoordinates.from_vector(q)
        losses.append(loss_q(cur, data, kind))
        path.append(cur)
        q = q - step * grad_q(cur, data, kind)
    return losses, path


def _lift(theta: Theta, data: Dataset, kind, p: float) -> tuple[np.ndarray, int, float, float]:
    """Horizontal lift plus the rank, smallest eigenvalue and retained-range
    conditioning (smallest kept / largest eigenvalue) of the restricted metric."""
    geom = decompose(theta, data.X, p)
    B = geom.horizontal.columns
    spec = numerics.sym_eig(geom.restricted_metric())
    lam, V = spec.eigenvalues, spec.eigenvectors
    if lam.size == 0 or lam[-1] <= 0:
        raise SingularMetricError("restricted metric is numerically zero", float(lam[0]) if lam.size else 0.0)
    keep = lam > numerics.RANGE_TOL * lam[-1]
    Vk = V[:, keep]
    b = B.T @ grad_theta(theta, data, kind)
    cond = float(lam[keep][0] / lam[-1])
    return B @ (Vk @ ((Vk.T @ b) / lam[keep])), int(keep.sum()), float(lam[0]), cond


def quotient_flow(
    theta0: Theta,
    data: Dataset,
    kind,
    step: float,
    steps: int,
    record_stride: int = 10,
    method: str = "rk4",
    p: float = DEGREE,
    singular_tol: float = 1e-2,
) -> TrajectoryRecord:
    """Integrate d theta/dt = -u(theta), u the horizontal lift of the
    quotient gradient, with fixed-step RK4 (default) or explicit Euler.

    The lift blows up like 1/distance near a lower stratum, so the path is
    stopped with SingularMetricError when the restricted metric loses rank
    or its retained-range conditioning falls below ``singular_tol`` times
    its initial value. Every integrator stage is checked.
    """
    if step <= 0:
        raise ValidationError("step must be positive")
    if method not in ("rk4", "euler"):
        raise ValidationError(f"unknown integrator {method!r}")
    kind = LossKind(kind)
    m, d = theta0.m, theta0.d
    if not 0 < singular_tol < 1:
        raise ValidationError("singular_tol must be in (0, 1)")
    _, rank0, _, cond0 = _lift(theta0, data, kind, p)

    def velocity(x: np.ndarray, t: float) -> np.ndarray:
        theta = Theta.from_flat(x, m, d)
        u, rank, lam_min, cond = _lift(theta, data, kind, p)
        if rank < rank0:
            raise SingularMetricError(
                f"restricted metric lost rank ({rank} < {rank0}) at t = {t:.6g}", lam_min, time=t
            )
        if cond < singular_tol * cond0:
            raise SingularMetricError(
                f"restricted metric degenerating (conditioning {cond:.3e}, initially {cond0:.3e}) at t = {t:.6g}",
                lam_min,
                time=t,
            )
        return -u

    rec = TrajectoryRecord()
    x = theta0.flat()
    for k in range(steps + 1):
        t = k * step
        theta = Theta.from_flat(x, m, d)
        v = velocity(x, t)
        rec.times.append(t)
        rec.losses.append(loss(theta, data, kind))
        rec.grad_norms.append(float(np.linalg.norm(grad_theta(theta, data, kind))))
        vs, hs = _split_speeds(theta, v, p)
        rec.vertical_speed.append(vs)
        rec.horizontal_speed.append(hs)
        if k % record_stride == 0 or k == steps:
            rec.snapshot(t, theta)
        if k == steps:
            break
        if method == "euler":
            x = x + step * v
        else:
            k2 = velocity(x + 0.5 * step * v, t + 0.5 * step)
            k3 = velocity(x + 0.5 * step * k2, t + 0.5 * step)
            k4 = velocity(x + step * k3, t + step)
            x = x + step / 6.0 * (v + 2 * k2 + 2 * k3 + k4)
    return rec


def decay_rate(losses, times, floor: float = 0.0, window: tuple[float, float] | None = None) -> float:
    """Least-squares slope of -log(loss - floor) against time."""
    losses = np.asarray(losses, dtype=float)
    times = np.asarray(times, dtype=float)
    if losses.shape != times.shape:
        raise ValidationError("losses and times differ in length")
    if window is not None:
        sel = (times >= window[0]) & (times <= window[1])
        losses, times = losses[sel], times[sel]
    if losses.size < 3:
        raise ValidationError(f"need at least 3 points in the window, got {losses.size}")
    gap = losses - floor
    if np.any(gap <= 0):
        raise ValidationError("loss at or below the floor inside the window")
    slope = np.polyfit(times, -np.log(gap), 1)[0]
    return float(slope)


def horizontal_evolution_check(traj: TrajectoryRecord, data: Dataset, p: float = DEGREE, tol: float | None = None) -> float:
    """Max relative defect between the change of predictions and the
    prediction change carried by the horizontal part of the motion.

    Between consecutive snapshots the integral of J(theta) P_hor(theta)
    d theta along the chord is taken with Simpson's rule, which is exact
    here because predictions are cubic in theta. Defects are normalized by
    max(||dPhi||, ||J|| ||d theta||). ``tol`` is accepted for interface
    symmetry and unused.
    """
    X = data.X
    worst = 0.0
    for th0, th1 in zip(traj.thetas[:-1], traj.thetas[1:]):
        dtheta = th1.flat() - th0.flat()
        dphi = realize(th1, X) - realize(th0, X)
        m, d = th0.m, th0.d
        mid = Theta.from_flat(th0.flat() + 0.5 * dtheta, m, d)
        pieces = []
        for th in (th0, mid, th1):
            hor = dtheta - vertical_projection(th, dtheta, p)
            pieces.append(jacobian(th, X) @ hor)
        carried = (pieces[0] + 4 * pieces[1] + pieces[2]) / 6.0
        scale = max(float(np.linalg.norm(dphi)), float(np.linalg.norm(jacobian(mid, X))) * float(np.linalg.norm(dtheta)))
        if scale == 0.0:
            continue
        worst = max(worst, float(np.linalg.norm(dphi - carried)) / scale)
    return worst


@dataclass(frozen=True)
class ConvergenceCertificate:
    mu_hat: float
    L_hat: float
    predicted_rate: float
    measured_rate: float
    loss_floor: float
    degenerate: bool
    neighborhood_verified: bool = False
    note: str = "neighborhood assumption unverified"

    def satisfied(self, rate_tol: float = 0.0) -> bool:
        if self.degenerate:
            return False
        return self.measured_rate >= self.predicted_rate - rate_tol

    def to_dict(self) -> dict:
        return {
            "mu_hat": self.mu_hat,
            "L_hat": self.L_hat,
            "predicted_rate": self.predicted_rate,
            "measured_rate": self.measured_rate,
            "loss_floor": self.loss_floor,
            "degenerate": self.degenerate,
            "neighborhood_verified": self.neighborhood_verified,
            "note": self.note,
        }


def reference_floor(data: Dataset, kind, losses=()) -> float:
    """Optimal loss over all of Sym(d) (convex problem, Newton), clipped
    below the observed losses with a small guard."""
    _, best = minimize_q(data, kind)
    observed = min(losses) if len(losses) else best
    low = min(best, observed)
    return max(0.0, low - 64 * np.finfo(float).eps * max(1.0, abs(low)))


def certify_convergence(
    traj: TrajectoryRecord,
    data: Dataset,
    kind,
    neighborhood_fraction: float = 0.5,
    floor: float | None = None,
) -> ConvergenceCertificate:
    """Effective-curvature bounds over the trajectory tail and the measured
    log-gap decay rate over the same tail."""
    if not 0 < neighborhood_fraction <= 1:
        raise ValidationError("neighborhood_fraction must be in (0, 1]")
    count = max(2, int(math.ceil(neighborhood_fraction * len(traj.q_snapshots))))
    if len(traj.q_snapshots) < 2:
        raise ValidationError("trajectory tail too short for a certificate")
    tail = traj.q_snapshots[-count:]
    spectra = [effective_hessian_q(q, data, kind)[2] for q in tail]
    mu = min(s.lambda_min_eff for s in spectra)
    L = max(s.lambda_max_eff for s in spectra)
    if floor is None:
        floor = reference_floor(data, kind, traj.losses)
    t_start = traj.snapshot_times[-count]
    times = np.asarray(traj.times)
    losses = np.asarray(traj.losses)
    gap_floor = 1e3 * np.finfo(float).eps * max(1.0, abs(floor))
    sel = (times >= t_start) & (losses - floor > gap_floor)
    degenerate = int(sel.sum()) < 3
    measured = math.nan
    if not degenerate:
        measured = decay_rate(losses[sel], times[sel], floor)
    return ConvergenceCertificate(mu, L, 2.0 * mu, measured, floor, degenerate)
