"""Kinematic synergy analysis and linear knee maps.

The data matrix stacks ``[q1, q1dot, q2, q2dot, q3, q3dot]`` per sample (one
column per sample) with the knee taken from the inertial motion.  Its SVD
gives coordination modes ``u_i`` and temporal patterns ``v_i``; a rank-r
truncation yields an affine map from intact-limb state to knee state.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError, RankDeficientError
from .gait import DerivedTrial
from .inertial import InertialTrajectory, KneeState

N_STATE = 6
INTACT_ROWS = slice(0, 4)
KNEE_ROWS = slice(4, 6)
PINV_RTOL = 1e-10


@dataclass(frozen=True, eq=False)
class DataMatrix:
    X: np.ndarray  # (6, n), mean removed
    x0: np.ndarray  # (6,)
    scale: np.ndarray | None = None  # per-row std when z-scored

    @property
    def n(self) -> int:
        return self.X.shape[1]

    def raw(self) -> np.ndarray:
        X = self.X if self.scale is None else self.X * self.scale[:, None]
        return X + self.x0[:, None]


def stack_states(d: DerivedTrial, knee: InertialTrajectory) -> np.ndarray:
    """Raw 6 x n state matrix of one trial."""
    if len(knee.t) != d.n or not np.allclose(knee.t, d.t, rtol=0, atol=1e-9):
        raise DataError(f"trial {d.base.trial_id}: knee trajectory ({len(knee.t)} samples) "
                        f"is not on the trial grid ({d.n} samples)")
    return np.vstack([d.q[0], d.qdot[0], d.q[1], d.qdot[1], knee.q3, knee.q3dot])


def build_data_matrix(trials: DerivedTrial | Sequence[DerivedTrial],
                      knees: InertialTrajectory | Sequence[InertialTrajectory],
                      normalize: bool = False) -> DataMatrix:
    """Mean-removed data matrix from one or several trials (columns concatenated)."""
    if isinstance(trials, DerivedTrial):
        trials, knees = [trials], [knees]
    if len(trials) != len(knees):
        raise DataError(f"{len(trials)} trials but {len(knees)} knee trajectories")
    Xm = np.hstack([stack_states(d, k) for d, k in zip(trials, knees)])
    # mean taken as an offset from the first column so constant rows center exactly
    first = Xm[:, :1]
    offset = (Xm - first).mean(axis=1)
    x0 = first[:, 0] + offset
    X = (Xm - first) - offset[:, None]
    scale = None
    if normalize:
        scale = X.std(axis=1)
        scale[scale == 0] = 1.0
        X = X / scale[:, None]
    return DataMatrix(X=X, x0=x0, scale=scale)


@dataclass(frozen=True, eq=False)
class SynergyModel:
    U: np.ndarray  # (6, 6)
    s: np.ndarray  # (6,)
    V: np.ndarray  # (n, 6)
    x0: np.ndarray  # (6,)
    r: int = 4
    scale: np.ndarray | None = None  # per-row std if the data were z-scored

    def __post_init__(self):
        if not 1 <= self.r <= N_STATE:
            raise DataError(f"truncation rank must be in 1..6, got {self.r}")

    def with_rank(self, r: int) -> SynergyModel:
        return replace(self, r=r)

    def reconstruct(self, r: int | None = None) -> np.ndarray:
        r = self.r if r is None else r
        return (self.U[:, :r] * self.s[:r]) @ self.V[:, :r].T

    def contribution(self) -> np.ndarray:
        return contribution_ratios(self.s)


def decompose(dm: DataMatrix | np.ndarray, r: int = 4) -> SynergyModel:
    """Thin SVD with the largest-magnitude entry of each ``u_i`` made positive."""
    X = dm.X if isinstance(dm, DataMatrix) else np.asarray(dm, dtype=float)
    x0 = dm.x0 if isinstance(dm, DataMatrix) else np.zeros(X.shape[0])
    scale = dm.scale if isinstance(dm, DataMatrix) else None
    if X.shape[0] != N_STATE:
        raise DataError(f"data matrix must have {N_STATE} rows, got {X.shape[0]}")
    if X.shape[1] < N_STATE:
        raise DataError(f"need at least {N_STATE} samples for the decomposition, got {X.shape[1]}")
    U, s, Vt = np.linalg.svd(X, full_matrices=False)
    pivot = np.argmax(np.abs(U), axis=0)
    signs = np.sign(U[pivot, np.arange(U.shape[1])])
    signs[signs == 0] = 1.0
    U = U * signs
    V = Vt.T * signs
    return SynergyModel(U=U, s=s, V=V, x0=np.array(x0, dtype=float), r=r, scale=scale)


def contribution_ratios(s) -> np.ndarray:
    """Share of total variance per mode, ``s_i**2 / sum(s**2)``."""
    s = np.asarray(s, dtype=float)
    total = float(np.sum(s**2))
    if total == 0.0:
        raise DataError("all singular values are zero")
    return s**2 / total


def synergy_map(m: SynergyModel, theta12_raw) -> KneeState:
    """Knee state implied by intact state ``[q1, q1dot, q2, q2dot]`` under the rank-r synergy."""
    K, b = synergy_affine(m)
    q3, q3d = K @ np.asarray(theta12_raw, dtype=float)[:4] + b
    return KneeState(float(q3), float(q3d))


def synergy_affine(m: SynergyModel) -> tuple[np.ndarray, np.ndarray]:
    """``(K, b)`` such that the synergy map is ``theta3 = K @ theta12_raw + b``."""
    US = m.U[:, :m.r] * m.s[:m.r]
    upper = US[INTACT_ROWS]
    u, sv, vt = np.linalg.svd(upper, full_matrices=False)
    if sv.size == 0 or sv[0] == 0.0:
        raise RankDeficientError("upper synergy block is zero")
    keep = sv > PINV_RTOL * sv[0]
    if keep.sum() < min(upper.shape):
        raise RankDeficientError(f"upper synergy block is rank {int(keep.sum())} "
                                 f"< {min(upper.shape)} (tolerance {PINV_RTOL:g})")
    pinv = (vt[keep].T / sv[keep]) @ u[:, keep].T
    K = US[KNEE_ROWS] @ pinv
    if m.scale is not None:
        K = (m.scale[KNEE_ROWS, None] * K) / m.scale[None, INTACT_ROWS]
    b = m.x0[KNEE_ROWS] - K @ m.x0[INTACT_ROWS]
    return K, b


@dataclass(frozen=True, eq=False)
class LinearKneeMap:
    """``[q3d, q3d_dot] = A @ [q1, q1dot, q2, q2dot, 1]``."""

    A: np.ndarray  # (2, 5)
    residual_rms: np.ndarray | None = None  # per output, on the fit data

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        if A.shape != (2, 5):
            raise DataError(f"A must be 2x5, got {A.shape}")
        if not np.all(np.isfinite(A)):
            raise DataError("A has non-finite entries")
        object.__setattr__(self, "A", A)

    def __call__(self, theta12) -> np.ndarray:
        return predict_array(self, theta12)


def _as_pairs(samples) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(samples, tuple) and len(samples) == 2 and np.ndim(samples[0]) == 2:
        Theta, Y = samples
    else:
        pairs = list(samples)
        Theta = np.array([p[0] for p in pairs], dtype=float)
        Y = np.array([p[1] for p in pairs], dtype=float)
    return np.asarray(Theta, dtype=float), np.asarray(Y, dtype=float)


def lstsq_checked(M: np.ndarray, Y: np.ndarray, what: str, rtol: float = 1e-10) -> np.ndarray:
    """Least squares via SVD that refuses rank-deficient regressors."""
    if M.shape[0] < M.shape[1]:
        raise RankDeficientError(f"{what}: {M.shape[0]} samples for {M.shape[1]} unknowns")
    sv = np.linalg.svd(M, compute_uv=False)
    rank = int(np.sum(sv > rtol * sv[0])) if sv[0] > 0 else 0
    if rank < M.shape[1]:
        raise RankDeficientError(f"{what}: regressor matrix has rank {rank} < {M.shape[1]}")
    sol, *_ = np.linalg.lstsq(M, Y, rcond=None)
    return sol


def fit_A(samples) -> LinearKneeMap:
    """Least-squares fit of ``A`` from ``(theta12, theta3)`` pairs.

    ``samples`` is an iterable of pairs or a tuple of arrays ``(Theta (n, 5), Y (n, 2))``.
    """
    Theta, Y = _as_pairs(samples)
    if Theta.ndim != 2 or Theta.shape[1] != 5 or Y.shape != (Theta.shape[0], 2):
        raise DataError(f"expected theta12 rows of length 5 and theta3 rows of length 2, "
                        f"got {Theta.shape} and {Y.shape}")
    At = lstsq_checked(Theta, Y, "fit_A")
    resid = Y - Theta @ At
    return LinearKneeMap(A=At.T, residual_rms=np.sqrt(np.mean(resid**2, axis=0)))


def knee_samples(trials: Iterable[DerivedTrial], knees: Iterable[InertialTrajectory]):
    """``(Theta, Y)`` regression data pooled over trials."""
    thetas, ys = [], []
    for d, k in zip(trials, knees):
        stack_states(d, k)  # grid check
        thetas.append(d.theta12())
        ys.append(k.states())
    return np.vstack(thetas), np.vstack(ys)


def predict_array(m: LinearKneeMap, theta12) -> np.ndarray:
    theta = np.asarray(theta12, dtype=float)
    return theta @ m.A.T if theta.ndim == 2 else m.A @ theta


def predict(m: LinearKneeMap, theta12) -> KneeState:
    q3, q3d = m.A @ np.asarray(theta12, dtype=float)
    return KneeState(float(q3), float(q3d))
