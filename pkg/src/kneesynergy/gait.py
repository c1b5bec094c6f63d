"""Swing-phase gait trials: CSV ingestion, synthesis, differentiation, events.

Angles follow the convention of :mod:`kneesynergy.dynamics`: ``q1`` absolute
stance-leg angle from the horizontal, ``q2`` relative hip angle, ``q3``
relative knee angle with full extension at ``2*pi``.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import DataError, DegenerateTrialError

log = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi
CSV_HEADER = ("t", "q1", "q2", "q3")
META_KEYS = ("cadence_bpm", "subject_id", "trial_id")
TIME_JITTER_TOL = 1e-6  # s
PLATEAU_LIMIT = 0.05  # s


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class GaitEvents:
    toe_off: float
    max_flexion: float
    max_ext_velocity: float
    heel_contact: float

    def __post_init__(self):
        if not (self.toe_off <= self.max_flexion < self.max_ext_velocity <= self.heel_contact):
            raise DegenerateTrialError(
                "events out of order: toe_off={:.4f} t1={:.4f} t2={:.4f} heel_contact={:.4f}".format(
                    self.toe_off, self.max_flexion, self.max_ext_velocity, self.heel_contact))

    def phases(self) -> dict[str, tuple[float, float]]:
        """Initial swing, mid-swing and terminal swing as ``(start, end)`` times."""
        return {
            "initial": (self.toe_off, self.max_flexion),
            "mid": (self.max_flexion, self.max_ext_velocity),
            "terminal": (self.max_ext_velocity, self.heel_contact),
        }

    def shifted(self, offset: float) -> GaitEvents:
        return GaitEvents(self.toe_off + offset, self.max_flexion + offset,
                          self.max_ext_velocity + offset, self.heel_contact + offset)


@dataclass(frozen=True, eq=False)
class GaitTrial:
    """Uniformly sampled joint angles over one swing phase."""

    dt: float
    q1: np.ndarray
    q2: np.ndarray
    q3: np.ndarray
    t0: float = 0.0
    cadence: float | None = None
    events: GaitEvents | None = None
    subject_id: str = ""
    trial_id: str = ""
    times: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise DataError(f"sample interval must be positive, got {self.dt}")
        series = [_frozen(getattr(self, k)) for k in ("q1", "q2", "q3")]
        n = len(series[0])
        if any(s.ndim != 1 or len(s) != n for s in series):
            raise DataError("q1, q2, q3 must be 1-D series of equal length")
        if n < 2:
            raise DataError(f"trial needs at least 2 samples, got {n}")
        for name, s in zip(("q1", "q2", "q3"), series):
            if not np.all(np.isfinite(s)):
                raise DataError(f"{name} contains non-finite values")
            object.__setattr__(self, name, s)
        if self.times is not None:
            t = _frozen(self.times)
            if t.shape != (n,):
                raise DataError("time vector length does not match the angle series")
            object.__setattr__(self, "times", t)

    @property
    def n(self) -> int:
        return len(self.q1)

    @property
    def t(self) -> np.ndarray:
        if self.times is not None:
            return self.times
        return self.t0 + self.dt * np.arange(self.n)

    @property
    def angles(self) -> np.ndarray:
        return np.vstack([self.q1, self.q2, self.q3])

    @property
    def duration(self) -> float:
        return float(self.t[-1] - self.t[0])

    def with_events(self, events: GaitEvents | None) -> GaitTrial:
        return replace(self, events=events)

    def shifted(self, offset: float) -> GaitTrial:
        times = None if self.times is None else self.times + offset
        events = None if self.events is None else self.events.shifted(offset)
        return replace(self, t0=self.t0 + offset, times=times, events=events)


# ---------------------------------------------------------------------------
# CSV + metadata

def load_csv(path: str | Path, *, cadence: float | None = None) -> GaitTrial:
    """Load a ``t,q1,q2,q3`` CSV file plus its optional ``.meta`` sidecar.

    Row numbers in error messages count data rows from 1 (the header is row 0).
    """
    path = Path(path)
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != CSV_HEADER:
            raise DataError(f"{path}: header must be {','.join(CSV_HEADER)}, got {header!r}")
        rows = []
        for row_no, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 4:
                raise DataError(f"{path}: row {row_no}: expected 4 fields, got {len(row)}")
            vals = []
            for name, cell in zip(CSV_HEADER, row):
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(f"{path}: row {row_no}: field {name} is not a number: {cell!r}") from None
                if not math.isfinite(v):
                    raise DataError(f"{path}: row {row_no}: field {name} is not finite ({cell.strip()})")
                vals.append(v)
            rows.append(vals)
    if len(rows) < 2:
        raise DataError(f"{path}: need at least 2 samples, got {len(rows)}")
    data = np.array(rows)
    t = data[:, 0]
    steps = np.diff(t)
    bad = np.flatnonzero(steps <= 0)
    if bad.size:
        raise DataError(f"{path}: row {bad[0] + 2}: time is not strictly increasing")
    n = len(t)
    dt = (t[-1] - t[0]) / (n - 1)
    jitter = np.abs(t - (t[0] + dt * np.arange(n)))
    worst = int(np.argmax(jitter))
    if jitter[worst] >= TIME_JITTER_TOL:
        raise DataError(f"{path}: row {worst + 1}: non-uniform sampling "
                        f"(deviation {jitter[worst]:.3g} s from dt={dt:.6g})")
    meta = read_meta(path.with_suffix(".meta"))
    if cadence is None and "cadence_bpm" in meta:
        try:
            cadence = float(meta["cadence_bpm"])
        except ValueError:
            raise DataError(f"{path}: cadence_bpm in metadata is not a number") from None
    q3 = data[:, 3]
    if q3.min() <= math.pi or q3.max() >= TWO_PI + 0.1:
        log.warning("%s: q3 leaves (pi, 2pi+0.1); check the angle convention", path)
    return GaitTrial(dt=dt, q1=data[:, 1], q2=data[:, 2], q3=q3, t0=float(t[0]),
                     cadence=cadence, subject_id=meta.get("subject_id", ""),
                     trial_id=meta.get("trial_id", path.stem), times=t)


def write_csv(path: str | Path, trial: GaitTrial, *, write_meta_file: bool = True) -> None:
    path = Path(path)
    lines = [",".join(CSV_HEADER)]
    for row in zip(trial.t, trial.q1, trial.q2, trial.q3):
        lines.append(",".join(f"{float(v):.17g}" for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    if write_meta_file:
        meta = {"subject_id": trial.subject_id, "trial_id": trial.trial_id}
        if trial.cadence is not None:
            meta["cadence_bpm"] = f"{trial.cadence:g}"
        write_meta(path.with_suffix(".meta"), meta)


def read_meta(path: str | Path) -> dict[str, str]:
    path = Path(path)
    if not path.exists():
        return {}
    meta = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"{path}:{lineno}: expected 'key = value'")
        k, v = (s.strip() for s in line.split("=", 1))
        meta[k] = v
    return meta


def write_meta(path: str | Path, meta: dict[str, str]) -> None:
    keys = [k for k in META_KEYS if k in meta] + sorted(k for k in meta if k not in META_KEYS)
    Path(path).write_text("".join(f"{k} = {meta[k]}\n" for k in keys), encoding="utf-8")


# ---------------------------------------------------------------------------
# Differentiation

@dataclass(frozen=True, eq=False)
class DerivedTrial:
    """Smoothed angles with first and second time derivatives, shape (3, n)."""

    base: GaitTrial
    q: np.ndarray
    qdot: np.ndarray
    qddot: np.ndarray
    window: int = 5

    def __post_init__(self):
        n = self.base.n
        for name in ("q", "qdot", "qddot"):
            a = _frozen(getattr(self, name))
            if a.shape != (3, n):
                raise DataError(f"{name} must have shape (3, {n}), got {a.shape}")
            object.__setattr__(self, name, a)

    @property
    def t(self) -> np.ndarray:
        return self.base.t

    @property
    def dt(self) -> float:
        return self.base.dt

    @property
    def n(self) -> int:
        return self.base.n

    @property
    def events(self) -> GaitEvents | None:
        return self.base.events

    def theta12(self) -> np.ndarray:
        """Regressor rows ``[q1, q1dot, q2, q2dot, 1]`` for every sample, shape (n, 5)."""
        return np.column_stack([self.q[0], self.qdot[0], self.q[1], self.qdot[1], np.ones(self.n)])

    def theta12_at_toe_off(self) -> np.ndarray:
        return self.theta12()[0]

    def index_of(self, t: float) -> int:
        return int(np.argmin(np.abs(self.t - t)))

    def with_events(self, events: GaitEvents | None) -> DerivedTrial:
        return replace(self, base=self.base.with_events(events))

    def with_knee(self, q3, q3dot, q3ddot) -> DerivedTrial:
        """Copy with the knee series replaced (used to build exact references)."""
        q = np.array(self.q)
        qd = np.array(self.qdot)
        qdd = np.array(self.qddot)
        q[2], qd[2], qdd[2] = q3, q3dot, q3ddot
        base = replace(self.base, q3=q[2])
        return DerivedTrial(base=base, q=q, qdot=qd, qddot=qdd, window=self.window)

    def shifted(self, offset: float) -> DerivedTrial:
        return replace(self, base=self.base.shifted(offset))

    @cached_property
    def spline(self):
        """Cubic interpolant of ``[q1, q2, q1dot, q2dot, q1ddot, q2ddot]`` over time."""
        from scipy.interpolate import CubicSpline
        y = np.vstack([self.q[:2], self.qdot[:2], self.qddot[:2]])
        return CubicSpline(self.t, y, axis=1)


def smooth(x, window: int) -> np.ndarray:
    """Centered moving average; the window shrinks symmetrically near the ends.

    Symmetric weights keep the filter zero-phase and reproduce straight lines
    exactly, including at the endpoints.
    """
    x = np.asarray(x, dtype=float)
    if window < 1 or window % 2 == 0:
        raise ValueError(f"smoothing window must be a positive odd integer, got {window}")
    half = window // 2
    if half == 0:
        return x.copy()
    n = len(x)
    # work on deviations from the first sample so constant series stay exact
    csum = np.concatenate([[0.0], np.cumsum(x - x[0])])
    idx = np.arange(n)
    k = np.minimum(half, np.minimum(idx, n - 1 - idx))
    return x[0] + (csum[idx + k + 1] - csum[idx - k]) / (2 * k + 1)


def differentiate(trial: GaitTrial, window: int = 5) -> DerivedTrial:
    """Smooth each angle series, then take central differences.

    Endpoints use second-order one-sided differences.
    """
    if trial.n < 2 * window + 5:
        raise DataError(f"trial {trial.trial_id or '<unnamed>'} too short for window {window}: "
                        f"{trial.n} samples < {2 * window + 5}")
    q = np.vstack([smooth(s, window) for s in (trial.q1, trial.q2, trial.q3)])
    # differencing deviations from the first sample keeps constant series exact
    qdot = np.gradient(q - q[:, :1], trial.dt, axis=1, edge_order=2)
    qddot = np.gradient(qdot - qdot[:, :1], trial.dt, axis=1, edge_order=2)
    return DerivedTrial(base=trial, q=q, qdot=qdot, qddot=qddot, window=window)


# ---------------------------------------------------------------------------
# Events

def _check_plateau(values: np.ndarray, idx: int, dt: float, what: str, trial_id: str) -> None:
    tol = 1e-9 * max(1.0, abs(values[idx]))
    hits = np.flatnonzero(np.abs(values - values[idx]) <= tol)
    if (hits[-1] - hits[0]) * dt > PLATEAU_LIMIT:
        raise DegenerateTrialError(f"trial {trial_id}: {what} is not unique "
                                   f"(extremum plateau over {(hits[-1] - hits[0]) * dt:.3f} s)")


def detect_events(d: DerivedTrial) -> GaitEvents:
    """Toe-off, maximum flexion (t1), maximum extension velocity (t2), heel contact.

    Toe-off and heel contact are the first and last samples.  ``t1`` is the
    argmin of ``q3`` and ``t2`` the argmax of ``q3dot`` strictly between ``t1``
    and heel contact.  ``np.argmin``/``np.argmax`` return the earliest index on ties.
    """
    tid = d.base.trial_id or "<unnamed>"
    t = d.t
    q3 = d.q[2]
    v3 = d.qdot[2]
    i1 = int(np.argmin(q3))
    if i1 == 0 or i1 >= d.n - 2:
        raise DegenerateTrialError(f"trial {tid}: no knee flexion dip (q3 minimum at the boundary)")
    _check_plateau(q3, i1, d.dt, "maximum flexion", tid)
    window = v3[i1 + 1:d.n - 1]
    i2 = i1 + 1 + int(np.argmax(window))
    _check_plateau(window, i2 - i1 - 1, d.dt, "maximum extension velocity", tid)
    return GaitEvents(toe_off=float(t[0]), max_flexion=float(t[i1]),
                      max_ext_velocity=float(t[i2]), heel_contact=float(t[-1]))


# ---------------------------------------------------------------------------
# Synthetic gait

@dataclass(frozen=True)
class SynthProfile:
    """Shape parameters of the synthetic swing-phase generator.

    Amplitudes are linear in cadence (``base + slope * (cadence - 100)``), a
    deliberate simplification so that the toe-off state carries cadence
    information through a linear law.  This is a test-data stand-in, not a
    model of human gait.
    """

    kind: str = "steady"  # steady | initiation | termination
    sample_rate: float = 100.0
    swing_fraction: float = 0.8  # swing duration as a fraction of 60/cadence
    # stance leg: q1 sweeps from pi/2 + stance_amp*(1+stance_skew) down past vertical
    stance_amp: float = 0.22
    stance_amp_slope: float = 0.0015
    stance_skew: float = 0.1
    # thigh absolute angle phi2 = 3pi/2 + thigh_mean + thigh_amp*sin(pi*tau - thigh_phase)
    thigh_mean: float = 0.10
    thigh_mean_slope: float = 0.0005
    thigh_amp: float = 0.34
    thigh_amp_slope: float = 0.0018
    thigh_phase: float = 0.35 * math.pi
    thigh_h2: float = 0.03
    # knee flexion 2pi - q3 = flex_peak * sin(pi*(tau+flex_lead)/(1+flex_lead))**flex_power
    flex_peak: float = 1.10
    flex_peak_slope: float = 0.003
    flex_lead: float = 0.30
    flex_power: float = 1.5
    jitter: float = 0.03
    initiation_reach: float = 0.7  # share of the steady intact-limb arc covered by a first step
    initiation_start_speed: float = 0.6  # intact-limb speed at toe-off relative to steady walking

    def __post_init__(self):
        if self.kind not in ("steady", "initiation", "termination"):
            raise DataError(f"unknown synthetic profile kind {self.kind!r}")


CADENCE_RANGE = (60.0, 140.0)


def synth_gait(cadence: float, profile: SynthProfile | None = None, seed: int = 0,
               trial_id: str = "", subject_id: str = "synth") -> GaitTrial:
    """Generate a deterministic synthetic swing phase at ``cadence`` steps/min."""
    profile = profile or SynthProfile()
    if not (CADENCE_RANGE[0] <= cadence <= CADENCE_RANGE[1]):
        raise DataError(f"cadence must be within {CADENCE_RANGE[0]:g}-{CADENCE_RANGE[1]:g} bpm, got {cadence:g}")
    rng = np.random.default_rng(seed)
    jit = profile.jitter * rng.uniform(-1.0, 1.0, size=6)

    dt = 1.0 / profile.sample_rate
    duration = profile.swing_fraction * 60.0 / cadence
    if profile.kind == "initiation":
        duration *= profile.initiation_reach
    n = int(round(duration / dt)) + 1
    t = dt * np.arange(n)
    tau = t / t[-1]
    dv = cadence - 100.0

    stance = (profile.stance_amp + profile.stance_amp_slope * dv) * (1.0 + jit[0])
    mean = profile.thigh_mean + profile.thigh_mean_slope * dv + 0.5 * jit[1]
    amp = (profile.thigh_amp + profile.thigh_amp_slope * dv) * (1.0 + jit[2])
    phase = profile.thigh_phase + jit[3]
    flex = (profile.flex_peak + profile.flex_peak_slope * dv) * (1.0 + jit[4])
    lead = profile.flex_lead * (1.0 + jit[5])

    def steady(u):
        q1 = math.pi / 2 + stance * ((1.0 + profile.stance_skew) - 2.0 * u
                                     + profile.stance_skew * np.sin(math.pi * u))
        arg = math.pi * u - phase
        phi2 = 1.5 * math.pi + mean + amp * np.sin(arg) + profile.thigh_h2 * np.sin(2.0 * arg)
        return q1, phi2

    if profile.kind == "initiation":
        # first step from standstill: a short, slow step in which the intact
        # limbs cover only the first part of their usual arc, while the knee
        # still completes a (shallower) flexion-extension cycle
        s0 = profile.initiation_start_speed
        q1, phi2 = steady(profile.initiation_reach * (s0 * tau + (1.0 - s0) * tau * tau))
        q3 = TWO_PI - 0.1 * np.cos(0.5 * math.pi * tau) ** 2 - 0.6 * flex * np.sin(math.pi * tau) ** 2
    else:
        q1, phi2 = steady(tau)
        s = np.sin(math.pi * (tau + lead) / (1.0 + lead))
        q3 = TWO_PI - flex * np.abs(s) ** profile.flex_power
        if profile.kind == "termination":
            # final step: the stance leg and thigh stop short of their steady excursion
            brake = 0.5 * (1.0 - np.cos(math.pi * tau))
            q1 = q1 + stance * 0.8 * brake * tau
            phi2 = phi2 - 0.35 * amp * brake * tau
    q2 = phi2 - q1
    return GaitTrial(dt=dt, q1=q1, q2=q2, q3=q3, cadence=float(cadence), subject_id=subject_id,
                     trial_id=trial_id or f"{profile.kind}_c{cadence:g}_s{seed}")
