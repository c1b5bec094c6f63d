from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from kneesynergy.dynamics import (TWO_PI, LinkParams, ModelParams, anthropometric_params, coriolis_terms,
                                  coriolis_vector, forward_dynamics, gravity_vector, heel_position,
                                  inertia_matrix, joint_positions, knee_acceleration, load_params,
                                  potential_energy, total_energy, write_params)
from kneesynergy.errors import DataError

angles = st.floats(-2 * math.pi, 4 * math.pi, allow_nan=False)
rates = st.floats(-8.0, 8.0, allow_nan=False)
state3 = st.tuples(angles, angles, angles)
rate3 = st.tuples(rates, rates, rates)


def test_prosthesis_constants(params):
    l3 = params.link3
    h33 = l3.I + l3.m * l3.lg**2
    assert h33 == pytest.approx(0.204425, abs=1e-12)
    assert l3.m * l3.lg * params.g == pytest.approx(4.16925, abs=1e-12)
    assert inertia_matrix(params, (0.3, 1.0, 2.0))[2, 2] == pytest.approx(0.204425, abs=1e-12)


def test_h32_equals_h33_at_right_angle(params):
    H = inertia_matrix(params, (1.0, 2.0, 1.5 * math.pi))
    assert H[2, 1] == pytest.approx(H[2, 2], abs=1e-12)


def test_default_file_matches_anthropometric_defaults():
    assert load_params() == anthropometric_params()


def test_params_round_trip(tmp_path):
    p = ModelParams(LinkParams(9.0, 0.9, 0.5, 0.8), LinkParams(6.0, 0.45, 0.2, 0.1), g=9.8)
    write_params(tmp_path / "m.cfg", p)
    assert load_params(tmp_path / "m.cfg") == p


def test_partial_file_falls_back_to_defaults(tmp_path):
    (tmp_path / "m.cfg").write_text("link3.m = 1.5  # heavier shank\n\ngravity=9.80665\n")
    p = load_params(tmp_path / "m.cfg")
    assert p.link3.m == 1.5 and p.g == 9.80665
    assert p.link1 == anthropometric_params().link1


@pytest.mark.parametrize("text, needle", [("link4.m = 1\n", "unknown parameter key"),
                                          ("link1.m = heavy\n", "not a number"),
                                          ("link1.m 3\n", "expected 'key = value'"),
                                          ("link1.lg = 5\n", "outside")])
def test_bad_parameter_files(tmp_path, text, needle):
    (tmp_path / "m.cfg").write_text(text)
    with pytest.raises(DataError, match=needle):
        load_params(tmp_path / "m.cfg")


def test_missing_parameter_file(tmp_path):
    with pytest.raises(DataError, match="cannot read"):
        load_params(tmp_path / "nope.cfg")


@given(state3, rate3)
def test_matches_lagrangian_oracle(params, q, qd):
    np.testing.assert_allclose(inertia_matrix(params, q), oracles.mass_matrix(params, q), rtol=1e-12, atol=1e-12)
    scale = 1.0 + np.max(np.abs(oracles.coriolis(params, q, qd)))
    np.testing.assert_allclose(coriolis_vector(params, q, qd), oracles.coriolis(params, q, qd),
                               rtol=0, atol=1e-12 * scale)
    np.testing.assert_allclose(gravity_vector(params, q), oracles.gravity(params, q), rtol=0, atol=1e-11)


@given(state3, rate3)
def test_skew_part_is_exactly_skew(params, q, qd):
    Hdot, S = coriolis_terms(params, q, qd)
    assert np.array_equal(S + S.T, np.zeros((3, 3)))
    assert np.array_equal(Hdot, Hdot.T)


@given(state3, rate3)
def test_hdot_minus_2c_is_skew(params, q, qd):
    # passivity: qdot' (Hdot - 2 C(q, qdot)) qdot = 0 for the Coriolis force C qdot
    Hdot, _ = coriolis_terms(params, q, qd)
    qd = np.asarray(qd)
    val = qd @ Hdot @ qd - 2.0 * qd @ coriolis_vector(params, q, qd)
    assert abs(val) <= 1e-10 * (1.0 + qd @ qd) ** 1.5


def test_zero_velocity_gives_no_coriolis(params):
    Hdot, S = coriolis_terms(params, (0.4, 2.0, 5.0), (0.0, 0.0, 0.0))
    assert not Hdot.any() and not S.any()


def test_inertia_positive_definite_million_configurations(params):
    rng = np.random.default_rng(0)
    Q = rng.uniform(-10.0, 10.0, size=(10**6, 3))
    Hs = np.array([inertia_matrix(params, q) for q in Q])
    assert np.array_equal(Hs, np.swapaxes(Hs, 1, 2))
    assert np.linalg.eigvalsh(Hs).min() > 0


def test_gravity_knee_row_vanishes_when_shank_vertical(params):
    g = gravity_vector(params, (1.2, 2.0, 1.5 * math.pi - 3.2))
    assert g[2] == pytest.approx(0.0, abs=1e-12)
    assert gravity_vector(params, (1.0, -1.0, 0.0))[2] == pytest.approx(4.16925, abs=1e-12)


@given(state3, rate3, st.tuples(rates, rates))
def test_knee_acceleration_matches_full_dynamics(params, q, qd, acc12):
    fast = knee_acceleration(params, q[:2], qd[:2], acc12, q[2], qd[2])
    expanded = oracles.knee_row_expanded(params, q[:2], qd[:2], acc12, q[2], qd[2])
    full = oracles.knee_row(params, q[:2], qd[:2], acc12, q[2], qd[2])
    assert fast == pytest.approx(expanded, rel=1e-12, abs=1e-11)
    assert fast == pytest.approx(full, rel=1e-9, abs=1e-9)


def test_knee_static_equilibrium_and_unit_torque(params):
    # shank hanging straight down: gravity has no moment, nothing moves
    q12 = (math.pi / 2, math.pi)
    assert knee_acceleration(params, q12, (0, 0), (0, 0), TWO_PI, 0.0) == pytest.approx(0.0, abs=1e-12)
    assert knee_acceleration(params, q12, (0, 0), (0, 0), TWO_PI, 0.0, tau3=0.204425) == pytest.approx(1.0)
    assert knee_acceleration(params, q12, (0, 0), (0, 0), TWO_PI, 0.0, f_damp=-0.204425) == pytest.approx(-1.0)


def test_forward_dynamics_consistent_with_knee_row(params):
    q, qd = (1.4, 3.9, 6.0), (0.3, -1.2, 2.0)
    acc = forward_dynamics(params, q, qd)
    k = knee_acceleration(params, q[:2], qd[:2], acc[:2], q[2], qd[2])
    assert k == pytest.approx(acc[2], rel=1e-12)
    np.testing.assert_allclose(acc, oracles.accelerations(params, q, qd), rtol=1e-9)


def _lengths(l1, l2, l3):
    return ModelParams(LinkParams(10, l1, l1 / 2, 1), LinkParams(6, l2, l2 / 2, 0.1), LinkParams(1, l3, l3 / 2, 0.02))


def test_heel_position_examples():
    p = _lengths(0.9, 0.45, 0.501)
    # leg vertical, thigh and shank hanging down: the heel sits l1 - l2 - l3 above the pivot
    x, y = heel_position(p, (math.pi / 2, math.pi, TWO_PI))
    assert x == pytest.approx(0.0, abs=1e-12)
    assert y == pytest.approx(0.9 - 0.45 - 0.501, abs=1e-12)
    # every link along +x
    x, y = heel_position(p, (0.0, 0.0, 0.0))
    assert (x, y) == pytest.approx((1.851, 0.0), abs=1e-12)
    # knee bent 90 degrees from a horizontal thigh
    x, y = heel_position(p, (math.pi / 2, -math.pi / 2, -math.pi / 2))
    assert (x, y) == pytest.approx((0.45, 0.9 - 0.501), abs=1e-12)


@given(state3, st.floats(-math.pi, math.pi))
def test_rigid_rotation_rotates_every_joint(params, q, alpha):
    P = joint_positions(params, q)
    Pr = joint_positions(params, (q[0] + alpha, q[1], q[2]))
    R = np.array([[math.cos(alpha), -math.sin(alpha)], [math.sin(alpha), math.cos(alpha)]])
    np.testing.assert_allclose(Pr, P @ R.T, atol=1e-12)
    seg = np.linalg.norm(np.diff(P, axis=0), axis=1)
    np.testing.assert_allclose(seg, [l.l for l in params.links], rtol=1e-12)


@given(state3, rate3)
def test_energy_matches_oracle_and_scales(params, q, qd):
    assert total_energy(params, q, qd) == pytest.approx(oracles.energy(params, q, qd), rel=1e-12, abs=1e-10)
    kin = total_energy(params, q, qd) - potential_energy(params, q)
    kin2 = total_energy(params, q, 2 * np.asarray(qd)) - potential_energy(params, q)
    assert kin >= 0
    assert kin2 == pytest.approx(4 * kin, rel=1e-12, abs=1e-12)


def _chain_rk4(p, q, qd, dt, steps):
    x = np.concatenate([q, qd])

    def f(x):
        return np.concatenate([x[3:], forward_dynamics(p, x[:3], x[3:])])

    for _ in range(steps):
        k1 = f(x)
        k2 = f(x + 0.5 * dt * k1)
        k3 = f(x + 0.5 * dt * k2)
        k4 = f(x + dt * k3)
        x = x + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return x


def test_free_chain_energy_short_run(params):
    # the full 1 s run is part of the acceptance suite; this one is a quick smoke check
    q0, qd0 = np.array([1.3, 4.0, 5.9]), np.array([0.5, -1.0, 2.0])
    x = _chain_rk4(params, q0, qd0, 1e-3, 200)
    e0 = total_energy(params, q0, qd0)
    assert abs(total_energy(params, x[:3], x[3:]) - e0) / abs(e0) < 1e-6
