"""Closed-loop swing simulation of the prosthetic knee.

The intact joints replay a gait trial; the knee follows the chain dynamics
under a PD torque tracking a desired knee state, a soft end-stop damper near
full extension, and a mechanical lock that engages once the knee reaches the
extension limit while still extending.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .adaptive import AdaptiveRegressor, realize_A
from .dynamics import TWO_PI, ModelParams, heel_height, knee_acceleration
from .errors import DataError, DegenerateTrialError, NumericalError
from .gait import DerivedTrial, GaitEvents
from .inertial import SUBSTEPS, IntactDrive, InertialTrajectory, KneeState, rk4_step
from .synergy import LinearKneeMap

SIM_COLUMNS = ("t", "q3", "q3dot", "q3d", "q3d_dot", "tau", "f_damp", "locked")


@dataclass(frozen=True)
class ControllerGains:
    Kp: float = 60.0  # N*m/rad
    Kd: float = 4.0  # N*m*s/rad

    def __post_init__(self):
        if not self.Kp > 0 or not self.Kd >= 0:
            raise DataError(f"controller gains need Kp > 0 and Kd >= 0, got Kp={self.Kp}, Kd={self.Kd}")


@dataclass(frozen=True)
class DampingParams:
    Kf: float = 30.0  # N*m*s/rad
    steepness: float = 300.0  # 1/rad
    limit: float = TWO_PI

    def __post_init__(self):
        if not self.Kf >= 0 or not self.steepness > 0:
            raise DataError(f"damping needs Kf >= 0 and steepness > 0, got Kf={self.Kf}, "
                            f"steepness={self.steepness}")


def damping_force(q3: float, q3dot: float, d: DampingParams) -> float:
    """``Kf * (1/(1 + exp(-steepness*(limit - q3))) - 1) * q3dot``, overflow-safe."""
    z = d.steepness * (q3 - d.limit)
    # 1 - sigmoid(-z) == sigmoid(z)
    if z >= 0:
        active = 1.0 / (1.0 + math.exp(-z))
    else:
        e = math.exp(z)
        active = e / (1.0 + e)
    return -d.Kf * active * q3dot


def pd_torque(state: KneeState, desired: KneeState, g: ControllerGains) -> float:
    return -g.Kp * (state.q3 - desired.q3) - g.Kd * (state.q3dot - desired.q3dot)


def _pd(x, xd, g: ControllerGains) -> float:
    return -g.Kp * (x[0] - xd[0]) - g.Kd * (x[1] - xd[1])


def desired_function(source, d: DerivedTrial, drive: IntactDrive):
    """Map a desired-motion source to ``t -> (q3d, q3d_dot)``."""
    if isinstance(source, AdaptiveRegressor):
        source = realize_A(source, d.theta12_at_toe_off())
    if isinstance(source, LinearKneeMap):
        A = source.A

        def desired(t):
            q1, q2, q1d, q2d, _, _ = drive(t)
            return A @ np.array([q1, q1d, q2, q2d, 1.0])
        return desired, source
    if isinstance(source, InertialTrajectory):
        from scipy.interpolate import CubicSpline
        spl = CubicSpline(source.t, np.vstack([source.q3, source.q3dot]), axis=1)
        return spl, None
    if callable(source):
        return (lambda t: np.asarray(source(t), dtype=float)), None
    raise TypeError(f"unsupported desired-motion source {type(source).__name__}")


@dataclass(frozen=True, eq=False)
class SimResult:
    t: np.ndarray
    q3: np.ndarray
    q3dot: np.ndarray
    q3d: np.ndarray
    q3d_dot: np.ndarray
    tau: np.ndarray
    f_damp: np.ndarray
    locked: np.ndarray
    lock_time: float | None
    limit: float = TWO_PI
    trial_id: str = ""
    knee_map: LinearKneeMap | None = None  # realized map, when the source was a linear map

    def to_csv(self, path: str | Path) -> None:
        cols = [self.t, self.q3, self.q3dot, self.q3d, self.q3d_dot, self.tau, self.f_damp]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(SIM_COLUMNS)
            for k in range(len(self.t)):
                w.writerow([f"{float(c[k]):.17g}" for c in cols] + [int(self.locked[k])])


def simulate_swing(p: ModelParams, intact: DerivedTrial, desired_source,
                   gains: ControllerGains | None = None, damping: DampingParams | None = None,
                   ic: KneeState | None = None, dt: float | None = None,
                   lock: bool = True, zero_control: bool = False) -> SimResult:
    """RK4 simulation of the knee over the swing of ``intact``.

    Output is sampled on the trial grid; the integrator takes ``dt`` steps
    (default trial dt / 10) and the lock is checked after every step.
    ``zero_control`` switches the PD torque off (gains are then ignored).
    """
    gains = gains or ControllerGains()
    damping = damping or DampingParams()
    dt = dt if dt is not None else intact.dt / SUBSTEPS
    drive = IntactDrive(intact, dt)
    desired, knee_map = desired_function(desired_source, intact, drive)
    if ic is None:
        ic = KneeState(float(intact.q[2, 0]), float(intact.qdot[2, 0]))
    limit = damping.limit

    def field(t, x):
        q1, q2, q1d, q2d, q1dd, q2dd = drive(t)
        tau = 0.0 if zero_control else _pd(x, desired(t), gains)
        fd = damping_force(x[0], x[1], damping) if damping.Kf else 0.0
        acc = knee_acceleration(p, (q1, q2), (q1d, q2d), (q1dd, q2dd), x[0], x[1], tau, fd)
        return np.array([x[1], acc])

    t = intact.t
    n = len(t)
    X = np.empty((n, 2))
    D = np.empty((n, 2))
    tau = np.zeros(n)
    fdamp = np.zeros(n)
    locked = np.zeros(n, dtype=bool)
    x = ic.as_array()
    lock_time = None

    def record(i, x):
        X[i] = x
        D[i] = desired(float(t[i]))
        if lock_time is not None:
            locked[i] = True
            return
        tau[i] = 0.0 if zero_control else _pd(x, D[i], gains)
        fdamp[i] = damping_force(x[0], x[1], damping) if damping.Kf else 0.0

    if lock and x[0] >= limit and x[1] > 0:
        x = np.array([limit, 0.0])
        lock_time = float(t[0])
    record(0, x)
    for i in range(n - 1):
        if lock_time is None:
            span = t[i + 1] - t[i]
            m = max(1, int(math.ceil(span / dt - 1e-9)))
            h = span / m
            for k in range(m):
                try:
                    with np.errstate(over="ignore", invalid="ignore"):  # divergence is reported below
                        x = rk4_step(field, t[i] + k * h, x, h)
                except (ValueError, OverflowError):  # math.cos(inf) and friends inside a stage
                    x = np.array([math.nan, math.nan])
                if not np.all(np.isfinite(x)):
                    raise NumericalError(f"trial {intact.base.trial_id}: knee state diverged at "
                                         f"t={t[i] + (k + 1) * h:.4f} s (check gains)")
                if lock and x[0] >= limit and x[1] > 0:
                    x = np.array([limit, 0.0])
                    lock_time = float(t[i] + (k + 1) * h)
                    break
        record(i + 1, x)
    return SimResult(t=np.array(t), q3=X[:, 0], q3dot=X[:, 1], q3d=D[:, 0], q3d_dot=D[:, 1],
                     tau=tau, f_damp=fdamp, locked=locked, lock_time=lock_time, limit=limit,
                     trial_id=intact.base.trial_id, knee_map=knee_map)


def heel_trajectory(r: SimResult, p: ModelParams, intact: DerivedTrial) -> np.ndarray:
    return heel_height(p, intact.q[0], intact.q[1], r.q3)


def min_clearance(r: SimResult, p: ModelParams, intact: DerivedTrial) -> float:
    """Lowest heel height over the swing; negative means the foot went through the floor."""
    return float(np.min(heel_trajectory(r, p, intact)))


def final_knee_angle(r: SimResult) -> float:
    return float(r.q3[-1])


def simulated_events(r: SimResult) -> GaitEvents:
    """Swing phases of the simulated knee (same rules as for measured trials)."""
    i1 = int(np.argmin(r.q3))
    if i1 == 0 or i1 >= len(r.t) - 2:
        raise DegenerateTrialError(f"trial {r.trial_id}: simulated knee has no flexion dip")
    i2 = i1 + 1 + int(np.argmax(r.q3dot[i1 + 1:-1]))
    return GaitEvents(float(r.t[0]), float(r.t[i1]), float(r.t[i2]), float(r.t[-1]))


def torque_phase_stats(r: SimResult, events: GaitEvents | None = None) -> dict[str, dict[str, float]]:
    """Peak ``|tau|`` and RMS ``tau`` per swing phase.

    Samples belong to ``[start, end)`` except the terminal phase which also
    includes its end.
    """
    events = events or simulated_events(r)
    out = {}
    phases = events.phases()
    for name, (a, b) in phases.items():
        if name == "terminal":
            mask = (r.t >= a - 1e-9) & (r.t <= b + 1e-9)
        else:
            mask = (r.t >= a - 1e-9) & (r.t < b - 1e-9)
        if not mask.any():
            raise DegenerateTrialError(f"trial {r.trial_id}: {name} swing has no samples")
        seg = r.tau[mask]
        out[name] = {"peak": float(np.max(np.abs(seg))), "rms": float(np.sqrt(np.mean(seg**2)))}
    return out
