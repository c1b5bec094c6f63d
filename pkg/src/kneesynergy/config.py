"""Pipeline configuration: JSON file, validation and content hash."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .errors import DataError
from .gait import CADENCE_RANGE

CONDITIONS = ("steady", "termination", "initiation")


@dataclass(frozen=True)
class PipelineConfig:
    model: str | None = None  # key = value parameter file; None = built-in defaults
    data_dir: str | None = None  # measured trials; None = synthesize
    cadences: tuple[float, ...] = (85.0, 100.0, 115.0, 130.0)
    trials_per_cadence: int = 5
    seed: int = 0
    sample_rate: float = 100.0
    dt: float | None = None  # integrator step; None = trial dt / 10
    window: int = 5
    training_cadences: tuple[float, ...] = (85.0, 100.0, 115.0, 130.0)
    fit_mode: str = "joint"
    rank: int = 4
    normalize: bool = False
    Kp: float = 60.0
    Kd: float = 4.0
    Kf: float = 30.0
    steepness: float = 300.0
    limit: float = 2.0 * math.pi
    conditions: tuple[str, ...] = CONDITIONS
    condition_cadence: float = 100.0
    condition_trials: int = 3
    extension_tol: float = 0.3  # final angle below limit - tol counts as an extension failure
    stick_every: int = 10
    out: str = "out"
    base_dir: str = field(default=".", compare=False)  # resolves relative paths; not hashed

    def __post_init__(self):
        for name in ("cadences", "training_cadences", "conditions"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        validate(self)

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def hash(self) -> str:
        """SHA-256 over every setting that influences results (and the model file contents)."""
        d = asdict(self)
        for k in ("out", "base_dir"):
            d.pop(k)
        if self.model is not None:
            d["model_sha256"] = file_sha256(self.resolve(self.model))
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def file_sha256(path: Path) -> str:
    try:
        return hashlib.sha256(Path(path).read_bytes()).hexdigest()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc


def _positive(cfg, name):
    v = getattr(cfg, name)
    if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
        raise DataError(f"config field {name}: must be a positive number, got {v!r}")


def validate(cfg: PipelineConfig) -> None:
    lo, hi = CADENCE_RANGE
    for name in ("cadences", "training_cadences"):
        values = getattr(cfg, name)
        if not values:
            raise DataError(f"config field {name}: must not be empty")
        for i, c in enumerate(values):
            if not isinstance(c, (int, float)) or not lo <= c <= hi:
                raise DataError(f"config field {name}[{i}]: cadence {c!r} outside {lo:g}-{hi:g} bpm")
    if not lo <= cfg.condition_cadence <= hi:
        raise DataError(f"config field condition_cadence: {cfg.condition_cadence!r} outside {lo:g}-{hi:g} bpm")
    for name in ("trials_per_cadence", "condition_trials", "stick_every", "rank", "window"):
        v = getattr(cfg, name)
        if not isinstance(v, int) or isinstance(v, bool) or v < 1:
            raise DataError(f"config field {name}: must be a positive integer, got {v!r}")
    if cfg.window % 2 == 0:
        raise DataError(f"config field window: must be odd, got {cfg.window}")
    if cfg.rank > 6:
        raise DataError(f"config field rank: must be at most 6, got {cfg.rank}")
    if not isinstance(cfg.seed, int) or isinstance(cfg.seed, bool) or not 0 <= cfg.seed < 2**64:
        raise DataError(f"config field seed: must be an unsigned 64-bit integer, got {cfg.seed!r}")
    for name in ("sample_rate", "Kp", "steepness", "limit"):
        _positive(cfg, name)
    if cfg.dt is not None:
        _positive(cfg, "dt")
    for name in ("Kd", "Kf", "extension_tol"):
        v = getattr(cfg, name)
        if not (isinstance(v, (int, float)) and math.isfinite(v) and v >= 0):
            raise DataError(f"config field {name}: must be a non-negative number, got {v!r}")
    if cfg.fit_mode not in ("joint", "two_stage"):
        raise DataError(f"config field fit_mode: must be 'joint' or 'two_stage', got {cfg.fit_mode!r}")
    for i, c in enumerate(cfg.conditions):
        if c not in CONDITIONS:
            raise DataError(f"config field conditions[{i}]: unknown condition {c!r}")
    if len(set(cfg.training_cadences)) < 2:
        raise DataError("config field training_cadences: need at least two distinct cadences")


def load_config(path: str | Path | None = None, **overrides) -> PipelineConfig:
    """Read a JSON config; ``overrides`` that are not None win over file values."""
    data: dict = {}
    base = "."
    if path is not None:
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise DataError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise DataError(f"config {path}: invalid JSON ({exc})") from exc
        if not isinstance(data, dict):
            raise DataError(f"config {path}: top level must be an object")
        base = str(path.parent)
    known = {f.name for f in fields(PipelineConfig)} - {"base_dir"}
    unknown = sorted(set(data) - known)
    if unknown:
        raise DataError(f"config: unknown field {unknown[0]!r}")
    data.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return PipelineConfig(base_dir=base, **data)
    except TypeError as exc:
        raise DataError(f"config: {exc}") from exc


def with_overrides(cfg: PipelineConfig, **kw) -> PipelineConfig:
    return replace(cfg, **{k: v for k, v in kw.items() if v is not None})
