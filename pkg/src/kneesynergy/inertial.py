"""Inertial (zero-torque) knee motion driven by the intact limb.

The knee obeys the knee row of the chain dynamics with the hip and stance
joints prescribed by a gait trial.  A trajectory through a given via state is
found by integrating backwards in reversal time ``s = t_q - t`` to the start
of the swing and forwards to its end.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dynamics import ModelParams, knee_acceleration
from .errors import DataError, DegenerateTrialError
from .gait import DerivedTrial, GaitEvents, GaitTrial, detect_events

SUBSTEPS = 10  # default integrator step is trial dt / SUBSTEPS
_GRID_TOL = 1e-9


@dataclass(frozen=True)
class KneeState:
    q3: float
    q3dot: float

    def __post_init__(self):
        if not (math.isfinite(self.q3) and math.isfinite(self.q3dot)):
            raise DataError(f"knee state must be finite, got ({self.q3}, {self.q3dot})")

    def as_array(self) -> np.ndarray:
        return np.array([self.q3, self.q3dot])


class IntactDrive:
    """Intact-limb states ``(q1, q2, q1dot, q2dot, q1ddot, q2ddot)`` at any time.

    Values come from the cubic interpolant of the derived trial.  They are
    tabulated once on the half-step lattice of the integrator so the RK4 stage
    times hit the table instead of the spline.
    """

    def __init__(self, d: DerivedTrial, step: float | None = None):
        self.d = d
        self.t_lo = float(d.t[0])
        self.t_hi = float(d.t[-1])
        self.res = 0.5 * (step if step is not None else d.dt / SUBSTEPS)
        m = int(round((self.t_hi - self.t_lo) / self.res))
        self.table = None
        if m > 0 and abs(self.t_lo + m * self.res - self.t_hi) < _GRID_TOL:
            grid = self.t_lo + self.res * np.arange(m + 1)
            self.table = [tuple(row) for row in d.spline(grid).T.tolist()]

    def __call__(self, t: float) -> tuple[float, ...]:
        if self.table is not None:
            k = (t - self.t_lo) / self.res
            i = int(round(k))
            if 0 <= i < len(self.table) and abs(k - i) * self.res < _GRID_TOL:
                return self.table[i]
        return tuple(self.d.spline(t).tolist())


def knee_field(p: ModelParams, drive: IntactDrive):
    """Right-hand side ``F(t, x)`` of the inertial knee equation."""
    def f(t: float, x: np.ndarray) -> np.ndarray:
        q1, q2, q1d, q2d, q1dd, q2dd = drive(t)
        acc = knee_acceleration(p, (q1, q2), (q1d, q2d), (q1dd, q2dd), x[0], x[1])
        return np.array([x[1], acc])
    return f


def rk4_step(f, t: float, x: np.ndarray, h: float) -> np.ndarray:
    k1 = f(t, x)
    k2 = f(t + 0.5 * h, x + 0.5 * h * k1)
    k3 = f(t + 0.5 * h, x + 0.5 * h * k2)
    k4 = f(t + h, x + h * k3)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _n_steps(span: float, dt: float) -> int:
    return max(1, int(math.ceil(abs(span) / dt - 1e-9)))


def _march(f, t0: float, x0: np.ndarray, t1: float, dt: float) -> np.ndarray:
    """Fixed-step RK4 from ``t0`` to ``t1`` (either direction) returning the end state."""
    n = _n_steps(t1 - t0, dt)
    h = (t1 - t0) / n
    x = x0
    for k in range(n):
        x = rk4_step(f, t0 + k * h, x, h)
    return x


def _reversed(f, t_ref: float):
    """Field in reversal time ``s``: ``dx/ds = -F(t_ref - s, x)``."""
    def g(s: float, x: np.ndarray) -> np.ndarray:
        return -f(t_ref - s, x)
    return g


def _check_span(d: DerivedTrial, *times: float) -> None:
    lo, hi = d.t[0] - _GRID_TOL, d.t[-1] + _GRID_TOL
    for t in times:
        if not lo <= t <= hi:
            raise DataError(f"time {t:.6g} s outside the trial span [{d.t[0]:.6g}, {d.t[-1]:.6g}]")


def integrate_knee(p: ModelParams, d: DerivedTrial, ic: KneeState, t_start: float, t_end: float,
                   direction: str = "forward", dt: float | None = None,
                   drive: IntactDrive | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Integrate the inertial knee equation from ``ic`` at ``t_start`` to ``t_end``.

    ``direction="backward"`` requires ``t_end <= t_start`` and integrates the
    reversal-time form.  Returns ``(t, x)`` at every RK4 step in integration
    order, ``x`` of shape (m, 2).
    """
    _check_span(d, t_start, t_end)
    dt = dt if dt is not None else d.dt / SUBSTEPS
    if dt <= 0:
        raise DataError(f"integration step must be positive, got {dt}")
    if direction == "forward" and t_end < t_start:
        raise DataError("forward integration needs t_end >= t_start")
    if direction == "backward" and t_end > t_start:
        raise DataError("backward integration needs t_end <= t_start")
    if direction not in ("forward", "backward"):
        raise ValueError(f"direction must be 'forward' or 'backward', got {direction!r}")
    drive = drive or IntactDrive(d, dt)
    f = knee_field(p, drive)
    span = abs(t_end - t_start)
    n = _n_steps(span, dt) if span > 0 else 0
    h = span / n if n else 0.0
    xs = np.empty((n + 1, 2))
    xs[0] = ic.as_array()
    if direction == "forward":
        for k in range(n):
            xs[k + 1] = rk4_step(f, t_start + k * h, xs[k], h)
        ts = t_start + h * np.arange(n + 1)
    else:
        g = _reversed(f, t_start)
        for k in range(n):
            xs[k + 1] = rk4_step(g, k * h, xs[k], h)
        ts = t_start - h * np.arange(n + 1)
    return ts, xs


@dataclass(frozen=True, eq=False)
class InertialTrajectory:
    """Knee inertial motion on the trial grid, anchored at ``t0_anchor``."""

    t: np.ndarray
    q3: np.ndarray
    q3dot: np.ndarray
    t0_anchor: float
    via: KneeState
    cost: float = float("nan")
    trial_id: str = ""

    def states(self) -> np.ndarray:
        return np.column_stack([self.q3, self.q3dot])

    def anchor_index(self) -> int:
        return int(np.argmin(np.abs(self.t - self.t0_anchor)))

    def knee_states(self) -> np.ndarray:
        """``[q3, q3dot]`` rows, shape (n, 2); alias kept for regression targets."""
        return self.states()

    def to_trial(self, source: GaitTrial) -> GaitTrial:
        """The source trial with its knee angle replaced by this motion."""
        from dataclasses import replace
        return replace(source, q3=self.q3, events=None,
                       trial_id=(source.trial_id + "_inertial") if source.trial_id else "inertial")


def _solve_on_grid(f, grid: np.ndarray, t_q: float, via: np.ndarray, dt: float) -> np.ndarray:
    """States at every ``grid`` time of the solution through ``via`` at ``t_q``."""
    out = np.empty((len(grid), 2))
    # backward leg in reversal time, marching grid point to grid point
    g = _reversed(f, t_q)
    below = np.flatnonzero(grid < t_q - _GRID_TOL)[::-1]
    s_prev, x = 0.0, via
    for i in below:
        s = t_q - grid[i]
        x = _march(g, s_prev, x, s, dt)
        out[i] = x
        s_prev = s
    at = np.flatnonzero(np.abs(grid - t_q) <= _GRID_TOL)
    out[at] = via
    t_prev, x = t_q, via
    for i in np.flatnonzero(grid > t_q + _GRID_TOL):
        x = _march(f, t_prev, x, grid[i], dt)
        out[i] = x
        t_prev = grid[i]
    return out


def solve_via_point(p: ModelParams, d: DerivedTrial, via: KneeState, t_q: float,
                    span: tuple[float, float] | None = None, dt: float | None = None,
                    drive: IntactDrive | None = None) -> InertialTrajectory:
    """Inertial knee motion passing through ``via`` at ``t_q`` over ``span``."""
    t_s, t_f = span if span is not None else (float(d.t[0]), float(d.t[-1]))
    _check_span(d, t_s, t_f)
    if not (t_s - _GRID_TOL <= t_q <= t_f + _GRID_TOL):
        raise DataError(f"via time {t_q:.6g} s outside span [{t_s:.6g}, {t_f:.6g}]")
    dt = dt if dt is not None else d.dt / SUBSTEPS
    drive = drive or IntactDrive(d, dt)
    mask = (d.t >= t_s - _GRID_TOL) & (d.t <= t_f + _GRID_TOL)
    grid = d.t[mask]
    states = _solve_on_grid(knee_field(p, drive), grid, t_q, via.as_array(), dt)
    return InertialTrajectory(t=grid, q3=states[:, 0], q3dot=states[:, 1], t0_anchor=float(t_q),
                              via=via, trial_id=d.base.trial_id)


def tracking_cost(t: np.ndarray, ref: np.ndarray, gen: np.ndarray, t1: float, t2: float) -> float:
    """Integral of the squared knee-angle error over ``[t1, t2]`` (trapezoid rule)."""
    mask = (t >= t1 - _GRID_TOL) & (t <= t2 + _GRID_TOL)
    return float(np.trapezoid((ref[mask] - gen[mask]) ** 2, t[mask]))


def optimize_T0(p: ModelParams, d: DerivedTrial, dt: float | None = None,
                grid_step: float | None = None) -> tuple[float, InertialTrajectory]:
    """Choose the via time in mid-swing whose inertial motion best fits the reference knee.

    Candidates run from maximum flexion ``t1`` to maximum extension velocity
    ``t2`` in steps of ``grid_step`` (default: the trial sampling interval).
    The earliest minimizer wins ties.
    """
    events = d.events or detect_events(d)
    t1, t2 = events.max_flexion, events.max_ext_velocity
    if not t1 < t2:
        raise DegenerateTrialError(f"trial {d.base.trial_id}: degenerate mid-swing [{t1}, {t2}]")
    dt = dt if dt is not None else d.dt / SUBSTEPS
    grid_step = grid_step if grid_step is not None else d.dt
    drive = IntactDrive(d, dt)
    n_cand = int(math.floor((t2 - t1) / grid_step + 1e-9)) + 1
    candidates = t1 + grid_step * np.arange(n_cand)

    knee_spline = None
    best: InertialTrajectory | None = None
    for t0 in candidates:
        j = int(np.argmin(np.abs(d.t - t0)))
        if abs(d.t[j] - t0) <= _GRID_TOL:
            t0 = float(d.t[j])
            via = KneeState(float(d.q[2, j]), float(d.qdot[2, j]))
        else:
            if knee_spline is None:
                from scipy.interpolate import CubicSpline
                knee_spline = CubicSpline(d.t, np.vstack([d.q[2], d.qdot[2]]), axis=1)
            via = KneeState(*map(float, knee_spline(t0)))
        traj = solve_via_point(p, d, via, float(t0), dt=dt, drive=drive)
        cost = tracking_cost(traj.t, d.q[2], traj.q3, t1, t2)
        if best is None or cost < best.cost:
            best = InertialTrajectory(t=traj.t, q3=traj.q3, q3dot=traj.q3dot, t0_anchor=traj.t0_anchor,
                                      via=via, cost=cost, trial_id=traj.trial_id)
    assert best is not None
    return best.t0_anchor, best


def phase_error(t: np.ndarray, ref: np.ndarray, gen: np.ndarray, T1: float, T2: float) -> float:
    """Mean absolute knee-angle error over ``[T1, T2]`` (trapezoid rule).

    Interval ends that fall between samples are linearly interpolated.
    """
    if not T2 > T1:
        raise DataError(f"empty interval [{T1}, {T2}]")
    t = np.asarray(t, dtype=float)
    if T1 < t[0] - _GRID_TOL or T2 > t[-1] + _GRID_TOL:
        raise DataError(f"interval [{T1}, {T2}] outside series span [{t[0]}, {t[-1]}]")
    err = np.asarray(ref, dtype=float) - np.asarray(gen, dtype=float)
    inner = (t > T1 + _GRID_TOL) & (t < T2 - _GRID_TOL)
    tt = np.concatenate([[T1], t[inner], [T2]])
    ee = np.abs(np.interp(tt, t, err))
    return float(np.trapezoid(ee, tt) / (T2 - T1))


def phase_errors(d: DerivedTrial, traj: InertialTrajectory,
                 events: GaitEvents | None = None) -> dict[str, float]:
    """Mean absolute error of the inertial motion against the reference knee per swing phase."""
    events = events or d.events or detect_events(d)
    ref = np.interp(traj.t, d.t, d.q[2])
    return {name: phase_error(traj.t, ref, traj.q3, a, b) for name, (a, b) in events.phases().items()}
