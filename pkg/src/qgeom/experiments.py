"""Deterministic drivers for the three numerical experiments.

Each driver returns an ExperimentOutput: named tables (lists of row dicts
with a fixed column order), a list of summary assertions and a provenance
block. ``write_run_dir`` serializes it.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from . import __version__, numerics
from .complexity import complexity_report
from .config import ExperimentConfig, rng_stream
from .dynamics import decay_rate, gradient_descent
from .errors import NumericalError, TrainingError, ValidationError
from .geometry import decompose, projected_hessian_spectrum, regularity_check
from .model import Dataset, LossKind, Task, Theta, hess_q, hess_theta, loss, q_matrix, realize, sym_dim
from .symmetry import GroupElement, apply_group, random_orbit_element

MAX_INIT_RETRIES = 20
MAX_PERTURB_RETRIES = 50
LOSS_BAND = 0.2


@dataclass
class ExperimentOutput:
    tables: dict[str, list[dict]] = field(default_factory=dict)
    summary: list[dict] = field(default_factory=list)
    statistics: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(item["pass"] for item in self.summary)

    def assert_(self, name: str, passed: bool, measured, tolerance) -> None:
        self.summary.append({"name": name, "pass": bool(passed), "measured": measured, "tolerance": tolerance})

    def table_csv(self, name: str) -> str:
        return to_csv(self.tables[name])


# ------------------------------------------------------------------ output

def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.17g}"
    return str(value)


def to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    if not rows:
        return ""
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(list(rows[0]))
    for row in rows:
        writer.writerow([_fmt(v) for v in row.values()])
    return buf.getvalue()


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)}")


def theta_json(theta: Theta) -> str:
    return json.dumps(theta.to_dict(), separators=(",", ":"))


def write_run_dir(output: ExperimentOutput, cfg: ExperimentConfig, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    if out.exists():
        raise FileExistsError(f"run directory already exists: {out}")
    out.mkdir(parents=True)
    cfg.save(out / "config.json")
    for name, rows in output.tables.items():
        (out / f"{name}.csv").write_text(to_csv(rows), encoding="utf-8", newline="")
    summary = {
        "passed": output.passed,
        "assertions": output.summary,
        "statistics": output.statistics,
        "provenance": output.provenance,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, default=_json_default) + "\n", encoding="utf-8")
    return out


def _provenance(cfg: ExperimentConfig, experiment: str) -> dict:
    return {"experiment": experiment, "version": __version__, "seed": int(cfg.seed), "config": cfg.to_dict()}


# ------------------------------------------------------------------- setup

def generate_teacher_data(cfg: ExperimentConfig, seed: int | None = None) -> tuple[Dataset, Theta]:
    """Standard normal inputs and a teacher with N(0,1) output weights and
    hidden weights uniform on the unit sphere. Classification labels split
    the teacher outputs at their median."""
    seed = cfg.seed if seed is None else seed
    X = rng_stream(seed, "data").standard_normal((cfg.n, cfg.d))
    r = rng_stream(seed, "teacher")
    a = r.standard_normal(cfg.m)
    W = r.standard_normal((cfg.m, cfg.d))
    W /= np.linalg.norm(W, axis=1)[:, None]
    teacher = Theta(a, W)
    f = realize(teacher, X)
    if cfg.loss is LossKind.LOGISTIC:
        y = np.where(f - np.median(f) >= 0, 1.0, -1.0)
        return Dataset(X, y, Task.CLASSIFICATION), teacher
    return Dataset(X, f, Task.REGRESSION), teacher


def initialization(cfg: ExperimentConfig, X=None, role: str = "init", seed: int | None = None) -> Theta:
    """a_i ~ N(0, 1/m), w_i ~ N(0, I/d), redrawn while the draw has
    vanishing or colliding units or a degenerate orbit."""
    seed = cfg.seed if seed is None else seed
    if X is None:
        X = generate_teacher_data(cfg, seed)[0].X
    r = rng_stream(seed, role)
    for _ in range(MAX_INIT_RETRIES):
        theta = Theta(r.normal(0.0, math.sqrt(1.0 / cfg.m), cfg.m), r.normal(0.0, math.sqrt(1.0 / cfg.d), (cfg.m, cfg.d)))
        rep = regularity_check(theta, X, tol=cfg.tol_block.rank_tol, angle_tol=cfg.tol_block.angle_tol)
        if rep.locally_free:
            return theta
    raise NumericalError(f"no generic initialization after {MAX_INIT_RETRIES} draws")


def _train(cfg: ExperimentConfig, data: Dataset, theta0: Theta, threshold: float | None, stride: int = 1000):
    return gradient_descent(theta0, data, cfg.loss, cfg.lr, cfg.steps, record_stride=stride, stop_loss=threshold, track_speeds=False)


def orbit_elements(cfg: ExperimentConfig, seed: int, count: int | None = None) -> list[tuple[str, GroupElement]]:
    """Base (identity) followed by ``count`` sampled elements: a pure
    permutation, a pure rescaling, then mixed elements."""
    count = cfg.num_orbit_reps if count is None else count
    r = rng_stream(seed, "orbit")
    m = cfg.m
    out = [("base", GroupElement.identity(m))]
    kinds = ["perm", "scale"] + ["mixed"] * max(0, count - 2)
    for kind in kinds[:max(count, 2)]:
        g = random_orbit_element(m, cfg.scale_log_range, r)
        if kind == "perm":
            g = GroupElement.permutation(g.perm)
        elif kind == "scale":
            g = GroupElement.scaling(g.scales)
        out.append((kind, g))
    return out


def _rel_dev(values, ref) -> float:
    values, ref = np.asarray(values, dtype=float), np.asarray(ref, dtype=float)
    scale = max(float(np.max(np.abs(ref))) if ref.size else 0.0, 1e-300)
    return float(np.max(np.abs(values - ref))) / scale if ref.size else 0.0


# ------------------------------------------------------ false flatness

def exp_false_flatness(cfg: ExperimentConfig) -> ExperimentOutput:
    if cfg.loss is not LossKind.SQUARED:
        raise ValidationError("false-flatness needs a regression (squared loss) config")
    if cfg.n < sym_dim(cfg.d):
        raise ValidationError(f"false-flatness needs n >= d(d+1)/2 = {sym_dim(cfg.d)}")
    data, _ = generate_teacher_data(cfg)
    theta0 = initialization(cfg, data.X)
    traj = _train(cfg, data, theta0, cfg.interpolation_threshold)
    final = traj.losses[-1]
    if final > cfg.interpolation_threshold:
        raise TrainingError(f"training stopped at loss {final:.3e} > threshold {cfg.interpolation_threshold:g}", final_loss=final)
    base = traj.final_theta
    base_pred = realize(base, data.X)
    pred_scale = max(1.0, float(np.max(np.abs(base_pred))))

    out = ExperimentOutput(provenance=_provenance(cfg, "false-flatness"))
    spectra_rows, rep_rows = [], []
    spectra: dict[str, list[np.ndarray]] = {"theta": [], "theta_projected": [], "q": []}
    kinds = []
    for rep_id, (kind, g) in enumerate(orbit_elements(cfg, cfg.seed)):
        theta = apply_group(g, base)
        per_space = {
            "theta": numerics.sym_eig(hess_theta(theta, data, cfg.loss)).eigenvalues,
            "theta_projected": projected_hessian_spectrum(theta, data, cfg.loss, decompose(theta, data.X, tol=cfg.tol_block.rank_tol)),
            "q": numerics.sym_eig(hess_q(q_matrix(theta), data, cfg.loss)).eigenvalues,
        }
        for space, values in per_space.items():
            spectra[space].append(values)
            spectra_rows.extend(
                {"rep_id": rep_id, "rep_kind": kind, "space": space, "index": i, "eigenvalue": float(v)}
                for i, v in enumerate(values)
            )
        defect = float(np.max(np.abs(realize(theta, data.X) - base_pred))) / pred_scale
        kinds.append(kind)
        rep_rows.append({
            "rep_id": rep_id,
            "rep_kind": kind,
            "prediction_defect": defect,
            "lambda_max_theta": float(per_space["theta"][-1]),
            "group_element": json.dumps(g.to_dict(), separators=(",", ":")),
            "theta": theta_json(theta),
        })
    out.tables["spectra"] = spectra_rows
    out.tables["representatives"] = rep_rows
    out.tables["training"] = [{"step": i, "loss": l} for i, l in enumerate(traj.losses) if i % 100 == 0 or i == len(traj.losses) - 1]

    max_defect = max(r["prediction_defect"] for r in rep_rows)
    out.assert_("prediction_defect", max_defect <= 1e-9, max_defect, 1e-9)
    q_spread = max(_rel_dev(s, spectra["q"][0]) for s in spectra["q"])
    out.assert_("q_spectra_spread", q_spread <= cfg.tol_block.spectra_tol, q_spread, cfg.tol_block.spectra_tol)
    perm_dev = max((_rel_dev(s, spectra["theta"][0]) for s, k in zip(spectra["theta"], kinds) if k == "perm"), default=0.0)
    out.assert_("perm_theta_spectra_match", perm_dev <= 1e-9, perm_dev, 1e-9)
    lam0 = spectra["theta"][0][-1]
    shifts = [abs(s[-1] - lam0) / abs(lam0) for s, k in zip(spectra["theta"], kinds) if k in ("scale", "mixed")]
    best = float(max(shifts, default=0.0))
    out.assert_("rescaled_lambda_max_shift", best > 0.05, best, 0.05)
    out.statistics = {"final_loss": final, "training_steps": len(traj.losses) - 1}
    return out


# ------------------------------------------------------ local dynamics

def checkpoint_index(losses) -> int:
    """First iterate with loss <= median(initial, final)."""
    losses = np.asarray(losses, dtype=float)
    level = float(np.median([losses[0], losses[-1]]))
    return int(np.flatnonzero(losses <= level)[0])


def _descriptors(theta: Theta, data: Dataset, kind, rank_tol: float) -> dict:
    lam_q = numerics.sym_eig(hess_q(q_matrix(theta), data, kind)).eigenvalues
    pos = lam_q[lam_q > rank_tol * lam_q[-1]]
    lam_t = np.abs(numerics.sym_eig(hess_theta(theta, data, kind)).eigenvalues)
    nz = lam_t[lam_t > rank_tol * lam_t.max()]
    return {
        "q_trace": float(np.sum(lam_q)),
        "q_frob": float(np.linalg.norm(lam_q)),
        "q_lambda_min_pos": float(pos.min()) if pos.size else 0.0,
        "theta_cond": float(nz.max() / nz.min()) if nz.size else math.inf,
    }


def exp_local_dynamics(cfg: ExperimentConfig) -> ExperimentOutput:
    if cfg.loss is not LossKind.LOGISTIC:
        raise ValidationError("local-dynamics needs a classification (logistic loss) config")
    out = ExperimentOutput(provenance=_provenance(cfg, "local-dynamics"))
    rows = []
    rank_tol = cfg.tol_block.rank_tol
    for s in range(cfg.num_seeds):
        seed = cfg.seed + s
        data, _ = generate_teacher_data(cfg, seed)
        theta0 = initialization(cfg, data.X, seed=seed)
        traj = gradient_descent(theta0, data, cfg.loss, cfg.lr, cfg.steps, record_stride=1, track_speeds=False)
        k = checkpoint_index(traj.losses)
        ckpt = traj.thetas[k]
        ckpt_loss = traj.losses[k]

        points = [("checkpoint", ckpt)]
        for kind, g in orbit_elements(cfg, seed)[1:]:
            points.append(("orbit", apply_group(g, ckpt)))
        r = rng_stream(seed, "perturb")
        scale = cfg.perturbation_scale * float(np.linalg.norm(ckpt.flat()))
        tries = 0
        for _ in range(cfg.num_perturbations):
            while True:
                tries += 1
                if tries > MAX_PERTURB_RETRIES * cfg.num_perturbations:
                    raise NumericalError(
                        f"seed {seed}: perturbation retry budget exhausted "
                        f"({len(points) - 1 - cfg.num_orbit_reps} accepted of {tries - 1} draws)"
                    )
                xi = r.standard_normal(ckpt.dim)
                cand = Theta.from_flat(ckpt.flat() + scale * xi / np.linalg.norm(xi), cfg.m, cfg.d)
                if abs(loss(cand, data, cfg.loss) - ckpt_loss) <= LOSS_BAND * ckpt_loss:
                    points.append(("perturb", cand))
                    break

        short = [
            gradient_descent(theta, data, cfg.loss, cfg.lr, cfg.decay_steps, record_stride=cfg.decay_steps, track_speeds=False)
            for _, theta in points
        ]
        best = min(min(traj.losses), min(min(t.losses) for t in short))
        floor = best - max(1e-12, 1e-9 * abs(best))
        for point_id, ((kind, theta), tr) in enumerate(zip(points, short)):
            row = {"seed": seed, "point_id": point_id, "point_kind": kind, "loss": tr.losses[0]}
            row.update(_descriptors(theta, data, cfg.loss, rank_tol))
            row["decay_rate"] = decay_rate(tr.losses, tr.times, floor)
            row["theta"] = theta_json(theta)
            rows.append(row)
    out.tables["points"] = rows

    descriptors = ["q_trace", "q_frob", "q_lambda_min_pos", "theta_cond"]
    rates = np.array([r["decay_rate"] for r in rows])
    corr_rows = []
    for name in descriptors:
        x = np.array([r[name] for r in rows])
        finite = np.isfinite(x)
        sp = stats.spearmanr(x[finite], rates[finite]).statistic if finite.sum() > 2 else math.nan
        pe = stats.pearsonr(x[finite], rates[finite]).statistic if finite.sum() > 2 else math.nan
        corr_rows.append({"descriptor": name, "spearman": float(sp), "pearson": float(pe), "count": int(finite.sum())})
    out.tables["correlations"] = corr_rows

    q_dev, rate_dev = 0.0, 0.0
    by_seed: dict[int, dict] = {}
    for r in rows:
        if r["point_kind"] == "checkpoint":
            by_seed[r["seed"]] = r
    for r in rows:
        if r["point_kind"] != "orbit":
            continue
        c = by_seed[r["seed"]]
        for name in ("q_trace", "q_frob", "q_lambda_min_pos"):
            q_dev = max(q_dev, abs(r[name] - c[name]) / max(abs(c[name]), 1e-300))
        rate_dev = max(rate_dev, abs(r["decay_rate"] - c["decay_rate"]) / max(abs(c["decay_rate"]), 1e-300))
    out.assert_("orbit_q_descriptors_match", q_dev <= 1e-8, q_dev, 1e-8)
    out.assert_("orbit_decay_rates_within_band", rate_dev <= cfg.decay_band, rate_dev, cfg.decay_band)
    out.statistics = {"correlations": corr_rows}
    return out


# ------------------------------------------------------- implicit bias

def _spread(values) -> float:
    values = np.asarray(values, dtype=float)
    ref = max(abs(float(values[0])), 1e-300)
    return float(values.max() - values.min()) / ref


def exp_implicit_bias(cfg: ExperimentConfig) -> ExperimentOutput:
    if cfg.loss is not LossKind.SQUARED:
        raise ValidationError("implicit-bias needs a regression (squared loss) config")
    if cfg.n >= sym_dim(cfg.d):
        raise ValidationError(f"implicit-bias needs n < d(d+1)/2 = {sym_dim(cfg.d)}")
    out = ExperimentOutput(provenance=_provenance(cfg, "implicit-bias"))
    data, _ = generate_teacher_data(cfg)

    # part 1: one trained solution and its orbit
    traj = _train(cfg, data, initialization(cfg, data.X), cfg.interpolation_threshold)
    if traj.losses[-1] > cfg.interpolation_threshold:
        raise TrainingError(f"base run stopped at loss {traj.losses[-1]:.3e}", final_loss=traj.losses[-1])
    base = traj.final_theta
    orbit_rows = []
    for rep_id, (kind, g) in enumerate(orbit_elements(cfg, cfg.seed)):
        theta = apply_group(g, base)
        row = {"rep_id": rep_id, "rep_kind": kind}
        row.update(complexity_report(theta).to_row())
        row["theta"] = theta_json(theta)
        orbit_rows.append(row)
    out.tables["orbit_complexity"] = orbit_rows
    q_fields = ("q_frobenius", "q_nuclear", "q_operator", "stable_rank", "quotient_theta_norm")
    q_spread = max(_spread([r[f] for r in orbit_rows]) for f in q_fields)
    sv = np.array([[float(v) for v in r["sv"].split(";")] for r in orbit_rows])
    q_spread = max(q_spread, _rel_dev(sv, np.broadcast_to(sv[0], sv.shape)))
    out.assert_("orbit_q_level_invariant", q_spread <= 1e-9, q_spread, 1e-9)
    norms = [r["theta_norm_sq"] for r in orbit_rows]
    norm_spread = (max(norms) - min(norms)) / min(norms)
    out.assert_("orbit_theta_norm_varies", norm_spread > 0.1, norm_spread, 0.1)

    # part 2: independent initializations on the same data
    seed_rows, spectrum_rows = [], []
    for s in range(cfg.num_seeds):
        theta0 = initialization(cfg, data.X, role=f"init/{s}")
        tr = _train(cfg, data, theta0, cfg.interpolation_threshold)
        converged = tr.losses[-1] <= cfg.interpolation_threshold
        rep = complexity_report(tr.final_theta)
        row = {"init_index": s, "converged": int(converged), "final_loss": tr.losses[-1], "steps": len(tr.losses) - 1}
        row.update(rep.to_row())
        row["theta"] = theta_json(tr.final_theta)
        seed_rows.append(row)
        spectrum_rows.extend(
            {"init_index": s, "converged": int(converged), "index": i, "singular_value": float(v)}
            for i, v in enumerate(rep.singular_values)
        )
    out.tables["seeds"] = seed_rows
    out.tables["singular_spectra"] = spectrum_rows
    ok = [r for r in seed_rows if r["converged"]]
    out.assert_("seeds_interpolating", 2 * len(ok) >= len(seed_rows), len(ok), len(seed_rows) / 2)
    if 2 * len(ok) < len(seed_rows):
        raise TrainingError(f"only {len(ok)} of {len(seed_rows)} initializations reached the threshold")

    def dispersion(name):
        vals = np.array([r[name] for r in ok], dtype=float)
        return {"mean": float(vals.mean()), "std": float(vals.std()), "min": float(vals.min()), "max": float(vals.max())}

    out.statistics = {
        "excluded_seeds": [r["init_index"] for r in seed_rows if not r["converged"]],
        "final_loss": {str(r["init_index"]): r["final_loss"] for r in seed_rows},
        "dispersion": {name: dispersion(name) for name in ("q_frobenius", "q_nuclear", "stable_rank", "theta_norm_sq", "path_like")},
    }
    return out


RUNNERS = {
    "false-flatness": exp_false_flatness,
    "local-dynamics": exp_local_dynamics,
    "implicit-bias": exp_implicit_bias,
}
