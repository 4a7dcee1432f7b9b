"""Experiment configuration and deterministic random streams."""

from __future__ import annotations

import dataclasses
import json
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .model import LossKind

EXPERIMENTS = ("false-flatness", "local-dynamics", "implicit-bias")


@dataclass(frozen=True)
class ToleranceBlock:
    rank_tol: float = 1e-8
    angle_tol: float = 1e-6
    spectra_tol: float = 1e-8


@dataclass(frozen=True)
class ExperimentConfig:
    d: int = 4
    m: int = 6
    n: int = 30
    seed: int = 0
    loss: LossKind = LossKind.SQUARED
    lr: float = 0.02
    steps: int = 50_000
    num_orbit_reps: int = 6
    scale_log_range: tuple[float, float] = (-1.0, 1.0)
    num_perturbations: int = 6
    perturbation_scale: float = 0.05
    interpolation_threshold: float = 1e-12
    tol_block: ToleranceBlock = field(default_factory=ToleranceBlock)
    num_seeds: int = 1
    decay_steps: int = 200
    decay_band: float = 0.05

    def __post_init__(self):
        object.__setattr__(self, "loss", LossKind(self.loss))
        object.__setattr__(self, "scale_log_range", tuple(float(v) for v in self.scale_log_range))
        if isinstance(self.tol_block, dict):
            object.__setattr__(self, "tol_block", ToleranceBlock(**self.tol_block))
        for name in ("d", "m", "n", "steps", "num_orbit_reps", "num_perturbations", "num_seeds", "decay_steps"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < 1:
                raise ValidationError(f"{name} must be a positive integer, got {value!r}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValidationError("seed must be a 64-bit unsigned integer")
        if not self.lr > 0:
            raise ValidationError("lr must be positive")
        lo, hi = self.scale_log_range
        if len(self.scale_log_range) != 2 or lo > hi:
            raise ValidationError(f"scale_log_range must be (lo, hi) with lo <= hi, got {self.scale_log_range}")
        if self.perturbation_scale < 0 or self.interpolation_threshold < 0 or self.decay_band <= 0:
            raise ValidationError("perturbation_scale, interpolation_threshold must be >= 0 and decay_band > 0")

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["loss"] = self.loss.value
        out["scale_log_range"] = list(self.scale_log_range)
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "ExperimentConfig":
        if not isinstance(obj, dict):
            raise ValidationError("config must be a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(obj) - known)
        if unknown:
            raise ValidationError(f"unknown config field(s): {', '.join(unknown)}")
        obj = dict(obj)
        if "tol_block" in obj:
            tb = obj["tol_block"]
            tb_known = {f.name for f in dataclasses.fields(ToleranceBlock)}
            if not isinstance(tb, dict) or set(tb) - tb_known:
                raise ValidationError(f"tol_block accepts only {sorted(tb_known)}")
            obj["tol_block"] = ToleranceBlock(**{k: float(v) for k, v in tb.items()})
        try:
            return cls(**obj)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ValidationError):
                raise
            raise ValidationError(str(exc)) from exc

    def with_overrides(self, overrides: dict[str, str]) -> "ExperimentConfig":
        """Apply ``key=value`` strings; values are parsed as JSON when possible.
        Dotted keys reach into tol_block (``tol_block.rank_tol=1e-9``)."""
        obj = self.to_dict()
        for key, raw in overrides.items():
            try:
                value = json.loads(raw)
            except json.JSONDecodeError:
                value = raw
            head, _, tail = key.partition(".")
            if head not in obj:
                raise ValidationError(f"override names unknown field {head!r}")
            if tail:
                if head != "tol_block" or tail not in obj["tol_block"]:
                    raise ValidationError(f"override names unknown field {key!r}")
                obj["tol_block"][tail] = value
            else:
                obj[head] = value
        return ExperimentConfig.from_dict(obj)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        path = Path(path)
        try:
            obj = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError as exc:
            raise ValidationError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config file {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(obj)


def default_config(experiment: str) -> ExperimentConfig:
    if experiment == "false-flatness":
        return ExperimentConfig()
    if experiment == "local-dynamics":
        return ExperimentConfig(
            d=4, m=6, n=60, loss=LossKind.LOGISTIC, lr=0.05, steps=4000, num_orbit_reps=4,
            scale_log_range=(-0.02, 0.02), num_perturbations=6, perturbation_scale=0.05,
            interpolation_threshold=0.0, num_seeds=5, decay_steps=200,
        )
    if experiment == "implicit-bias":
        return ExperimentConfig(
            d=6, m=8, n=12, lr=0.02, steps=100_000, num_orbit_reps=6, scale_log_range=(-1.0, 1.0),
            interpolation_threshold=1e-10, num_seeds=8,
        )
    raise ValidationError(f"unknown experiment {experiment!r}")


def rng_stream(seed: int, tag: str) -> np.random.Generator:
    """Counter-based (Philox) generator keyed by (seed, stream tag)."""
    key = (int(seed) << 64) | zlib.crc32(tag.encode("utf-8"))
    return np.random.Generator(np.random.Philox(key=key))
