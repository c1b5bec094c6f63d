"""Velocity-adaptive knee maps conditioned on the toe-off state.

The intact-limb state at prosthetic toe-off, ``theta_TO = [q1, q1dot, q2,
q2dot, 1]``, predicts the cadence linearly and sets every entry of the knee
map: ``a_ij = beta_ij @ theta_TO``.  The map is realized once per swing and
then applied to the instantaneous intact state.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError, RankDeficientError
from .gait import DerivedTrial
from .inertial import InertialTrajectory
from .synergy import LinearKneeMap, fit_A, lstsq_checked, stack_states

TRAINING_CADENCES = (85.0, 100.0, 115.0, 130.0)


@dataclass(frozen=True, eq=False)
class CadenceEstimator:
    c: np.ndarray  # (5,)

    def __post_init__(self):
        c = np.array(self.c, dtype=float)
        if c.shape != (5,) or not np.all(np.isfinite(c)):
            raise DataError(f"cadence coefficients must be 5 finite values, got {c!r}")
        object.__setattr__(self, "c", c)


def _toe_off_states(trials: Sequence[DerivedTrial]) -> np.ndarray:
    return np.array([d.theta12_at_toe_off() for d in trials])


def fit_cadence(trials: Sequence[DerivedTrial]) -> CadenceEstimator:
    """Least-squares cadence law from labeled trials' toe-off states."""
    if len(trials) < 5:
        raise DataError(f"need at least 5 trials to fit the cadence law, got {len(trials)}")
    labels = [d.base.cadence for d in trials]
    if any(v is None for v in labels):
        missing = [d.base.trial_id for d in trials if d.base.cadence is None]
        raise DataError(f"trials without a cadence label: {', '.join(missing)}")
    v = np.array(labels, dtype=float)
    if len(np.unique(v)) < 2:
        raise RankDeficientError("cadence law needs trials at two or more cadences")
    return CadenceEstimator(lstsq_checked(_toe_off_states(trials), v, "fit_cadence"))


def fit_cadence_arrays(theta_to: np.ndarray, cadence: np.ndarray) -> CadenceEstimator:
    return CadenceEstimator(lstsq_checked(np.asarray(theta_to, float), np.asarray(cadence, float),
                                          "fit_cadence"))


def estimate_cadence(e: CadenceEstimator, theta_to) -> float | np.ndarray:
    out = np.asarray(theta_to, dtype=float) @ e.c
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True, eq=False)
class AdaptiveRegressor:
    """``beta[i, j]`` is the 5-vector giving ``a_ij = beta[i, j] @ theta_TO``."""

    beta: np.ndarray  # (2, 5, 5)
    cadences: tuple[float, ...] = ()
    mode: str = "joint"

    def __post_init__(self):
        beta = np.array(self.beta, dtype=float)
        if beta.shape != (2, 5, 5) or not np.all(np.isfinite(beta)):
            raise DataError(f"beta must be a finite (2, 5, 5) array, got shape {beta.shape}")
        object.__setattr__(self, "beta", beta)


def realize_A(r: AdaptiveRegressor, theta_to) -> LinearKneeMap:
    return LinearKneeMap(A=r.beta @ np.asarray(theta_to, dtype=float))


def adaptive_design(theta: np.ndarray, theta_to: np.ndarray) -> np.ndarray:
    """Regressor rows ``kron(theta(t), theta_TO)`` so that ``y_i = row @ beta[i].ravel()``."""
    return np.einsum("nj,k->njk", theta, theta_to).reshape(len(theta), 25)


def fit_adaptive(trials: Sequence[DerivedTrial], knees: Sequence[InertialTrajectory],
                 mode: str = "joint", constant_only: bool = False) -> AdaptiveRegressor:
    """Fit every ``beta_ij`` by least squares over all samples of all trials.

    ``mode="joint"`` solves one stacked problem; ``mode="two_stage"`` fits a
    per-trial ``A`` first and then regresses each entry on the toe-off state.
    ``constant_only`` keeps only the constant slot of ``theta_TO``, which
    collapses the model to a single fixed ``A``.
    """
    if len(trials) != len(knees):
        raise DataError(f"{len(trials)} trials but {len(knees)} knee trajectories")
    cadences = tuple(sorted({float(d.base.cadence) for d in trials if d.base.cadence is not None}))
    if constant_only:
        Theta = np.vstack([d.theta12() for d in trials])
        Y = np.vstack([k.states() for k in knees])
        beta = np.zeros((2, 5, 5))
        beta[:, :, 4] = fit_A((Theta, Y)).A
        return AdaptiveRegressor(beta=beta, cadences=cadences, mode="constant")
    if len(cadences) < 2 and len({tuple(d.theta12_at_toe_off()) for d in trials}) < 2:
        raise RankDeficientError("all trials share one toe-off state; beta is not identifiable")

    if mode == "joint":
        rows, ys = [], []
        for d, k in zip(trials, knees):
            stack_states(d, k)
            rows.append(adaptive_design(d.theta12(), d.theta12_at_toe_off()))
            ys.append(k.states())
        B = lstsq_checked(np.vstack(rows), np.vstack(ys), "fit_adaptive")  # (25, 2)
        beta = B.T.reshape(2, 5, 5)
    elif mode == "two_stage":
        As = np.array([fit_A((d.theta12(), k.states())).A for d, k in zip(trials, knees)])
        T = _toe_off_states(trials)
        B = lstsq_checked(T, As.reshape(len(trials), 10), "fit_adaptive (two-stage)")  # (5, 10)
        beta = B.T.reshape(2, 5, 5)
    else:
        raise ValueError(f"mode must be 'joint' or 'two_stage', got {mode!r}")
    return AdaptiveRegressor(beta=beta, cadences=cadences, mode=mode)


def adaptive_predict(r: AdaptiveRegressor, d: DerivedTrial) -> np.ndarray:
    """Desired knee states for every sample of ``d``, shape (n, 2)."""
    return realize_A(r, d.theta12_at_toe_off())(d.theta12())


def rms_error(pred: np.ndarray, knee: InertialTrajectory) -> float:
    """RMS knee-angle error between predicted and inertial motion."""
    return float(np.sqrt(np.mean((pred[:, 0] - knee.q3) ** 2)))


@dataclass(frozen=True, eq=False)
class CoeffTrendReport:
    """Per-group R^2 of each ``a_ij`` regressed linearly on cadence."""

    r2: dict[str, np.ndarray] = field(default_factory=dict)  # group -> (2, 5)
    degenerate: dict[str, np.ndarray] = field(default_factory=dict)  # group -> (2, 5) bool
    slope: dict[str, np.ndarray] = field(default_factory=dict)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["group", "row"] + [f"a_i{j}" for j in range(1, 6)] + ["degenerate"])
            for g in sorted(self.r2):
                for i in range(2):
                    flags = "".join("1" if x else "0" for x in self.degenerate[g][i])
                    w.writerow([g, f"a_{i + 1}j"] + [f"{v:.6f}" for v in self.r2[g][i]] + [flags])


def r_squared(x: np.ndarray, y: np.ndarray) -> tuple[float, float, bool]:
    """``(R^2, slope, degenerate)`` of the ordinary least-squares line ``y ~ x``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    M = np.column_stack([x, np.ones_like(x)])
    coef, *_ = np.linalg.lstsq(M, y, rcond=None)
    ss_res = float(np.sum((y - M @ coef) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot <= 1e-300 or ss_tot <= 1e-24 * max(1.0, float(np.sum(y**2))):
        return 0.0, float(coef[0]), True
    return float(min(1.0, max(0.0, 1.0 - ss_res / ss_tot))), float(coef[0]), False


def coeff_trend_r2(per_cadence_As: Sequence[tuple[float, LinearKneeMap]],
                   grouping: Sequence[str] | None = None) -> CoeffTrendReport:
    groups = list(grouping) if grouping is not None else ["all"] * len(per_cadence_As)
    if len(groups) != len(per_cadence_As):
        raise DataError("grouping must have one key per coefficient matrix")
    report = CoeffTrendReport()
    for g in sorted(set(groups)):
        items = [item for item, key in zip(per_cadence_As, groups) if key == g]
        v = np.array([c for c, _ in items], dtype=float)
        if len(np.unique(v)) < 3:
            raise DataError(f"group {g!r}: need at least 3 distinct cadences, got {len(np.unique(v))}")
        As = np.array([m.A for _, m in items])
        r2 = np.zeros((2, 5))
        slope = np.zeros((2, 5))
        deg = np.zeros((2, 5), dtype=bool)
        for i in range(2):
            for j in range(5):
                r2[i, j], slope[i, j], deg[i, j] = r_squared(v, As[:, i, j])
        report.r2[g] = r2
        report.slope[g] = slope
        report.degenerate[g] = deg
    return report
