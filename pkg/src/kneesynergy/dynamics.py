"""Planar three-link model of the swing phase.

Link 1 is the stance leg pivoting on the floor at the origin, link 2 is the
thigh plus socket, link 3 is the prosthetic shank plus foot.  ``q1`` is the
absolute angle of link 1 measured from the horizontal (counterclockwise
positive), ``q2`` and ``q3`` are relative joint angles.  The knee is fully
extended at ``q3 = 2*pi`` and flexion decreases ``q3``.

Each link's center of mass lies on the link axis at ``lg`` from its proximal
end (the floor pivot for link 1).  The trunk is treated as vertical and
contributes nothing to the equations of motion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import DataError

TWO_PI = 2.0 * math.pi

DEFAULT_BODY_MASS = 65.9  # kg
DEFAULT_BODY_HEIGHT = 1.74  # m
DEFAULT_PARAMS_PATH = Path(__file__).parent / "data" / "default_model.cfg"


@dataclass(frozen=True)
class LinkParams:
    m: float
    l: float  # noqa: E741
    lg: float
    I: float  # noqa: E741

    def __post_init__(self):
        vals = (self.m, self.l, self.lg, self.I)
        if not all(math.isfinite(v) for v in vals):
            raise DataError(f"link parameters must be finite, got {vals}")
        if self.m <= 0 or self.l <= 0:
            raise DataError(f"link mass and length must be positive (m={self.m}, l={self.l})")
        if not 0.0 <= self.lg <= self.l:
            raise DataError(f"center of mass distance lg={self.lg} outside [0, l={self.l}]")
        if self.I < 0:
            raise DataError(f"moment of inertia must be non-negative, got {self.I}")


# Prosthetic shank + foot of a lightweight single-axis knee.
PROSTHESIS_LINK = LinkParams(m=1.0, l=0.501, lg=0.425, I=0.0238)


@dataclass(frozen=True)
class ModelParams:
    link1: LinkParams
    link2: LinkParams
    link3: LinkParams = PROSTHESIS_LINK
    g: float = 9.81

    @property
    def links(self) -> tuple[LinkParams, LinkParams, LinkParams]:
        return (self.link1, self.link2, self.link3)

    def constants(self) -> tuple[float, ...]:
        """Lumped inertial constants ``(a1, a2, a3, b12, b23, b13)`` of H(q)."""
        l1, l2, l3 = self.links
        a1 = l1.I + l1.m * l1.lg**2 + (l2.m + l3.m) * l1.l**2
        a2 = l2.I + l2.m * l2.lg**2 + l3.m * l2.l**2
        a3 = l3.I + l3.m * l3.lg**2
        b12 = (l2.m * l2.lg + l3.m * l2.l) * l1.l
        b23 = l3.m * l3.lg * l2.l
        b13 = l3.m * l3.lg * l1.l
        return a1, a2, a3, b12, b23, b13


def anthropometric_params(body_mass: float = DEFAULT_BODY_MASS,
                          body_height: float = DEFAULT_BODY_HEIGHT,
                          prosthesis: LinkParams = PROSTHESIS_LINK,
                          g: float = 9.81) -> ModelParams:
    """Intact-limb parameters from standard segment fractions (Winter's tables).

    Link 1 is the whole leg from floor to greater trochanter with the knee
    ignored; its COM distance is measured from the floor pivot.  Link 2 is the
    thigh.  These are stand-ins for subject-specific estimates and every value
    can be overridden through a parameter file.
    """
    m1 = 0.161 * body_mass
    l1 = 0.530 * body_height
    m2 = 0.100 * body_mass
    l2 = 0.245 * body_height
    link1 = LinkParams(m=m1, l=l1, lg=(1.0 - 0.447) * l1, I=m1 * (0.326 * l1) ** 2)
    link2 = LinkParams(m=m2, l=l2, lg=0.433 * l2, I=m2 * (0.323 * l2) ** 2)
    return ModelParams(link1=link1, link2=link2, link3=prosthesis, g=g)


_PARAM_KEYS = ("m", "l", "lg", "I")
_VALID_KEYS = {f"link{i}.{k}" for i in (1, 2, 3) for k in _PARAM_KEYS} | {"gravity"}


def load_params(path: str | Path | None = None) -> ModelParams:
    """Read a ``key = value`` parameter file.

    Keys are ``link{1,2,3}.{m,l,lg,I}`` and ``gravity``.  Missing keys fall
    back to the anthropometric defaults; unknown keys are an error.
    """
    path = Path(path) if path is not None else DEFAULT_PARAMS_PATH
    base = anthropometric_params()
    values: dict[str, float] = {}
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read parameter file {path}: {exc}") from exc
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in _VALID_KEYS:
            raise DataError(f"{path}:{lineno}: unknown parameter key {key!r}")
        try:
            values[key] = float(val)
        except ValueError:
            raise DataError(f"{path}:{lineno}: value for {key!r} is not a number: {val!r}") from None

    links = []
    for i, link in enumerate(base.links, start=1):
        fields = {k: values.get(f"link{i}.{k}", getattr(link, k)) for k in _PARAM_KEYS}
        links.append(LinkParams(**fields))
    g = values.get("gravity", base.g)
    return ModelParams(*links, g=g)


def write_params(path: str | Path, p: ModelParams) -> None:
    lines = ["# link{1,2,3}.{m,l,lg,I} in kg, m, m, kg*m^2; gravity in m/s^2"]
    for i, link in enumerate(p.links, start=1):
        for k in _PARAM_KEYS:
            lines.append(f"link{i}.{k} = {getattr(link, k)!r}")
    lines.append(f"gravity = {p.g!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def with_prosthesis(p: ModelParams, link3: LinkParams) -> ModelParams:
    return replace(p, link3=link3)


# ---------------------------------------------------------------------------
# Equations of motion

def inertia_matrix(p: ModelParams, q) -> np.ndarray:
    a1, a2, a3, b12, b23, b13 = p.constants()
    c2 = math.cos(q[1])
    c3 = math.cos(q[2])
    c23 = math.cos(q[1] + q[2])
    h33 = a3
    h23 = a3 + b23 * c3
    h13 = h23 + b13 * c23
    h22 = a2 + a3 + 2.0 * b23 * c3
    h12 = h22 + b12 * c2 + b13 * c23
    h11 = a1 + a2 + a3 + 2.0 * (b12 * c2 + b23 * c3 + b13 * c23)
    return np.array([[h11, h12, h13],
                     [h12, h22, h23],
                     [h13, h23, h33]])


def inertia_gradient(p: ModelParams, q) -> np.ndarray:
    """``dH[k] = dH/dq_k``; H does not depend on q1 so ``dH[0] = 0``."""
    _, _, _, b12, b23, b13 = p.constants()
    s2 = math.sin(q[1])
    s3 = math.sin(q[2])
    s23 = math.sin(q[1] + q[2])
    dH = np.zeros((3, 3, 3))
    # d/dq2
    dH[1, 0, 0] = -2.0 * (b12 * s2 + b13 * s23)
    dH[1, 0, 1] = dH[1, 1, 0] = -(b12 * s2 + b13 * s23)
    dH[1, 0, 2] = dH[1, 2, 0] = -b13 * s23
    # d/dq3
    dH[2, 0, 0] = -2.0 * (b23 * s3 + b13 * s23)
    dH[2, 0, 1] = dH[2, 1, 0] = -(2.0 * b23 * s3 + b13 * s23)
    dH[2, 0, 2] = dH[2, 2, 0] = -(b23 * s3 + b13 * s23)
    dH[2, 1, 1] = -2.0 * b23 * s3
    dH[2, 1, 2] = dH[2, 2, 1] = -b23 * s3
    return dH


def coriolis_terms(p: ModelParams, q, qdot) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(Hdot, S)`` with S skew-symmetric.

    The Coriolis/centrifugal force is ``0.5 * Hdot @ qdot + S @ qdot`` where
    ``S_ij = 0.5 * sum_k (dH_ik/dq_j - dH_jk/dq_i) * qdot_k``.
    """
    qdot = np.asarray(qdot, dtype=float)
    dH = inertia_gradient(p, q)
    Hdot = np.einsum("kij,k->ij", dH, qdot)
    # G[i, j] = sum_k dH_ik/dq_j qdot_k
    G = np.einsum("jik,k->ij", dH, qdot)
    S = 0.5 * (G - G.T)
    return Hdot, S


def coriolis_vector(p: ModelParams, q, qdot) -> np.ndarray:
    Hdot, S = coriolis_terms(p, q, qdot)
    qdot = np.asarray(qdot, dtype=float)
    return 0.5 * Hdot @ qdot + S @ qdot


def gravity_vector(p: ModelParams, q) -> np.ndarray:
    l1, l2, l3 = p.links
    c1 = math.cos(q[0])
    c12 = math.cos(q[0] + q[1])
    c123 = math.cos(q[0] + q[1] + q[2])
    g3 = l3.m * l3.lg * c123
    g2 = (l2.m * l2.lg + l3.m * l2.l) * c12 + g3
    g1 = (l1.m * l1.lg + (l2.m + l3.m) * l1.l) * c1 + g2
    return p.g * np.array([g1, g2, g3])


def forward_dynamics(p: ModelParams, q, qdot, tau=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Joint accelerations of the full three-link chain."""
    H = inertia_matrix(p, q)
    rhs = np.asarray(tau, dtype=float) - coriolis_vector(p, q, qdot) - gravity_vector(p, q)
    return np.linalg.solve(H, rhs)


def knee_acceleration(p: ModelParams, q12, q12dot, q12ddot, q3: float, q3dot: float,
                      tau3: float = 0.0, f_damp: float = 0.0) -> float:
    """Knee row of the chain dynamics with the intact joints prescribed.

    With ``tau3 = f_damp = 0`` this is the inertial (zero-torque) knee motion.
    ``q3dot`` is unused by the knee row but kept so callers can pass a full state.
    """
    l3 = p.link3
    l1 = p.link1.l
    l2 = p.link2.l
    q1, q2 = q12[0], q12[1]
    q1d, q2d = q12dot[0], q12dot[1]
    a3 = l3.I + l3.m * l3.lg**2
    mlg = l3.m * l3.lg
    h32 = a3 + mlg * l2 * math.cos(q3)
    h31 = h32 + mlg * l1 * math.cos(q2 + q3)
    velocity = mlg * (l1 * math.sin(q2 + q3) * q1d * q1d + l2 * math.sin(q3) * (q1d + q2d) ** 2)
    gravity = mlg * math.cos(q1 + q2 + q3) * p.g
    return (tau3 + f_damp - h31 * q12ddot[0] - h32 * q12ddot[1] - velocity - gravity) / a3


# ---------------------------------------------------------------------------
# Kinematics and energy

def joint_positions(p: ModelParams, q) -> np.ndarray:
    """Floor pivot, hip, knee and distal end of link 3 as a (4, 2) array."""
    phi1 = q[0]
    phi2 = phi1 + q[1]
    phi3 = phi2 + q[2]
    pts = np.zeros((4, 2))
    pts[1] = p.link1.l * np.array([math.cos(phi1), math.sin(phi1)])
    pts[2] = pts[1] + p.link2.l * np.array([math.cos(phi2), math.sin(phi2)])
    pts[3] = pts[2] + p.link3.l * np.array([math.cos(phi3), math.sin(phi3)])
    return pts


def heel_position(p: ModelParams, q) -> tuple[float, float]:
    x, y = joint_positions(p, q)[3]
    return float(x), float(y)


def heel_height(p: ModelParams, q1, q2, q3):
    """Vectorized heel ``y`` coordinate; accepts scalars or equal-length arrays."""
    q1 = np.asarray(q1, dtype=float)
    phi2 = q1 + q2
    return p.link1.l * np.sin(q1) + p.link2.l * np.sin(phi2) + p.link3.l * np.sin(phi2 + q3)


def com_heights(p: ModelParams, q) -> np.ndarray:
    l1, l2, l3 = p.links
    s1 = math.sin(q[0])
    s12 = math.sin(q[0] + q[1])
    s123 = math.sin(q[0] + q[1] + q[2])
    return np.array([l1.lg * s1,
                     l1.l * s1 + l2.lg * s12,
                     l1.l * s1 + l2.l * s12 + l3.lg * s123])


def potential_energy(p: ModelParams, q) -> float:
    masses = np.array([link.m for link in p.links])
    return float(p.g * masses @ com_heights(p, q))


def total_energy(p: ModelParams, q, qdot) -> float:
    qdot = np.asarray(qdot, dtype=float)
    kinetic = 0.5 * qdot @ inertia_matrix(p, q) @ qdot
    return float(kinetic) + potential_energy(p, q)
