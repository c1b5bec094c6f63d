from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import frozen_trial
from kneesynergy.errors import DataError, RankDeficientError
from kneesynergy.gait import DerivedTrial, GaitTrial
from kneesynergy.inertial import InertialTrajectory, KneeState
from kneesynergy.synergy import (DataMatrix, LinearKneeMap, build_data_matrix, contribution_ratios, decompose,
                                 fit_A, knee_samples, predict, predict_array, synergy_affine, synergy_map)


def _knee(t, q3, q3dot):
    return InertialTrajectory(t=np.asarray(t), q3=np.asarray(q3, float), q3dot=np.asarray(q3dot, float),
                              t0_anchor=float(t[0]), via=KneeState(float(q3[0]), float(q3dot[0])))


def _two_sample_trial():
    base = GaitTrial(dt=0.01, q1=[1.0, 2.0], q2=[4.0, 4.4], q3=[6.0, 5.0])
    q = np.array([[1.0, 2.0], [4.0, 4.4], [6.0, 5.0]])
    qdot = np.array([[0.5, 1.5], [-1.0, 1.0], [0.0, 0.0]])
    return DerivedTrial(base=base, q=q, qdot=qdot, qddot=np.zeros((3, 2)))


def test_constant_trial_gives_zero_matrix():
    d = frozen_trial(1.5, 4.6, duration=0.3)
    dm = build_data_matrix(d, _knee(d.t, np.full(d.n, 6.1), np.zeros(d.n)))
    assert not dm.X.any()
    np.testing.assert_array_equal(dm.x0, [1.5, 0.0, 4.6, 0.0, 6.1, 0.0])


def test_two_samples_give_midpoint():
    d = _two_sample_trial()
    dm = build_data_matrix(d, _knee(d.t, [5.9, 6.2], [-2.0, 3.0]))
    raw = np.array([[1.0, 2.0], [0.5, 1.5], [4.0, 4.4], [-1.0, 1.0], [5.9, 6.2], [-2.0, 3.0]])
    np.testing.assert_allclose(dm.x0, raw.mean(axis=1), atol=1e-15)
    half = (raw[:, 1] - raw[:, 0]) / 2
    np.testing.assert_allclose(dm.X[:, 0], -half, atol=1e-15)
    np.testing.assert_allclose(dm.X[:, 1], half, atol=1e-15)
    np.testing.assert_allclose(dm.raw(), raw, atol=1e-15)


def test_rows_are_centered_and_normalized(suite):
    trials, knees = suite.at(100.0)
    dm = build_data_matrix(trials, knees)
    assert dm.n == sum(d.n for d in trials)
    np.testing.assert_allclose(dm.X.mean(axis=1), 0.0, atol=1e-12)
    dz = build_data_matrix(trials, knees, normalize=True)
    np.testing.assert_allclose(dz.X.std(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(dz.raw(), dm.raw(), atol=1e-12)


def test_knee_off_grid_is_rejected(steady100):
    d, knee = steady100
    with pytest.raises(DataError, match="not on the trial grid"):
        build_data_matrix(d, _knee(knee.t[:-1], knee.q3[:-1], knee.q3dot[:-1]))
    with pytest.raises(DataError, match="knee trajectories"):
        build_data_matrix([d, d], [knee])


def test_rank_one_recovery():
    rng = np.random.default_rng(1)
    u = rng.normal(size=6)
    u /= np.linalg.norm(u)
    v = rng.normal(size=50)
    v /= np.linalg.norm(v)
    m = decompose(3.7 * np.outer(u, v))
    assert m.s[0] == pytest.approx(3.7, abs=1e-10)
    assert np.all(m.s[1:] < 1e-10)
    sign = np.sign(m.U[:, 0] @ u)
    np.testing.assert_allclose(m.U[:, 0], sign * u, atol=1e-10)
    np.testing.assert_allclose(m.V[:, 0], sign * v, atol=1e-10)


def test_full_rank_reconstruction_and_conventions():
    X = np.random.default_rng(2).normal(size=(6, 200))
    m = decompose(X)
    assert np.max(np.abs(m.reconstruct(6) - X)) <= 1e-9
    np.testing.assert_allclose(m.U.T @ m.U, np.eye(6), atol=1e-12)
    assert np.all(np.diff(m.s) <= 0)
    pivots = np.argmax(np.abs(m.U), axis=0)
    assert np.all(m.U[pivots, np.arange(6)] > 0)


def test_decompose_errors():
    with pytest.raises(DataError, match="6 rows"):
        decompose(np.zeros((5, 20)))
    with pytest.raises(DataError, match="at least 6 samples"):
        decompose(np.ones((6, 5)))


def test_contribution_examples():
    np.testing.assert_array_equal(contribution_ratios([1, 0, 0, 0, 0, 0]), [1, 0, 0, 0, 0, 0])
    np.testing.assert_allclose(contribution_ratios([2, 1, 0, 0, 0, 0]), [0.8, 0.2, 0, 0, 0, 0], atol=1e-15)
    with pytest.raises(DataError):
        contribution_ratios(np.zeros(6))


@given(st.lists(st.floats(0, 1e3), min_size=6, max_size=6).filter(lambda s: sum(s) > 1e-3))
def test_contribution_ratios_property(s):
    s = sorted(s, reverse=True)
    r = contribution_ratios(s)
    assert r.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(r >= 0) and np.all(np.diff(r) <= 1e-15)


def _rank4_data(n=300, seed=3):
    rng = np.random.default_rng(seed)
    B = rng.normal(size=(6, 4))
    C = rng.normal(size=(4, n))
    x0 = np.array([1.5, 0.2, 4.6, -0.1, 5.9, 0.3])
    return B @ C + x0[:, None]


def _model(raw, r, normalize=False):
    x0 = raw.mean(axis=1)
    X = raw - x0[:, None]
    scale = None
    if normalize:
        scale = X.std(axis=1)
        X = X / scale[:, None]
    return decompose(DataMatrix(X=X, x0=x0, scale=scale), r=r)


def test_mean_input_maps_to_mean_knee():
    raw = _rank4_data()
    m = _model(raw, 4)
    k = synergy_map(m, m.x0[:4])
    assert (k.q3, k.q3dot) == pytest.approx(tuple(m.x0[4:]), abs=1e-12)


@pytest.mark.parametrize("normalize", [False, True])
def test_rank_four_data_reproduced(normalize):
    raw = _rank4_data()
    m = _model(raw, 4, normalize)
    K, b = synergy_affine(m)
    pred = K @ raw[:4] + b[:, None]
    assert np.max(np.abs(pred - raw[4:])) <= 1e-8


def test_rank_six_equals_least_squares_map():
    raw = np.random.default_rng(4).normal(size=(6, 400)) + 3.0
    m = _model(raw, 6)
    theta = np.column_stack([raw[0], raw[1], raw[2], raw[3], np.ones(raw.shape[1])])
    A = fit_A((theta, raw[4:].T))
    K, b = synergy_affine(m)
    np.testing.assert_allclose((K @ raw[:4] + b[:, None]).T, predict_array(A, theta), atol=1e-8)
    k = synergy_map(m, raw[:4, 0])
    assert (k.q3, k.q3dot) == pytest.approx(tuple(predict_array(A, theta[0])), abs=1e-8)


def test_rank_deficient_upper_block():
    raw = _rank4_data()
    raw[2] = 2.0 * raw[0] - raw[1]  # intact rows only span three directions
    raw[3] = raw[0] + raw[1]
    with pytest.raises(RankDeficientError, match="upper synergy block"):
        synergy_affine(_model(raw, 4))


def test_rank_bounds():
    with pytest.raises(DataError):
        decompose(np.random.default_rng(0).normal(size=(6, 10)), r=7)


# ---------------------------------------------------------------------------
# fit_A and predict

def test_fit_A_exact_recovery(steady100):
    d, _ = steady100
    theta = d.theta12()
    A_true = np.random.default_rng(5).normal(size=(2, 5))
    m = fit_A((theta, theta @ A_true.T))
    assert np.max(np.abs(m.A - A_true)) <= 1e-8
    assert np.all(m.residual_rms < 1e-10)
    pairs = list(zip(theta, theta @ A_true.T))
    assert np.max(np.abs(fit_A(pairs).A - A_true)) <= 1e-8


def test_fit_A_duplicates_do_not_change_solution(steady100):
    d, knee = steady100
    theta, Y = d.theta12(), knee.states()
    once = fit_A((theta, Y)).A
    twice = fit_A((np.vstack([theta, theta]), np.vstack([Y, Y]))).A
    np.testing.assert_allclose(twice, once, rtol=0, atol=1e-12)


def test_fit_A_output_scaling_is_exact(steady100):
    d, knee = steady100
    theta, Y = d.theta12(), knee.states()
    D = np.diag([2.0, 0.5])
    np.testing.assert_array_equal(fit_A((theta, Y @ D)).A, D @ fit_A((theta, Y)).A)


def test_fit_A_on_synthetic_100(suite):
    trials, knees = suite.at(100.0)
    m = fit_A(knee_samples(trials, knees))
    assert m.residual_rms[0] < 0.15


def test_fit_A_rank_deficient():
    d = frozen_trial(1.5, 4.6, duration=0.3)
    with pytest.raises(RankDeficientError, match="rank"):
        fit_A((d.theta12(), np.zeros((d.n, 2))))
    with pytest.raises(RankDeficientError, match="samples"):
        fit_A((np.eye(5)[:3], np.zeros((3, 2))))
    with pytest.raises(DataError):
        fit_A((np.zeros((10, 4)), np.zeros((10, 2))))


def test_predict():
    assert predict(LinearKneeMap(np.zeros((2, 5))), [1, 2, 3, 4, 1]) == KneeState(0.0, 0.0)
    A = np.arange(10.0).reshape(2, 5)
    m = LinearKneeMap(A)
    x, y = np.array([1, 2, 3, 4, 1.0]), np.array([0.5, -1, 2, 0, 1.0])
    np.testing.assert_allclose(m(2 * x - 3 * y), 2 * m(x) - 3 * m(y), atol=1e-12)
    k = predict(m, x)
    assert (k.q3, k.q3dot) == tuple(A @ x)


def test_predict_matches_fit_residuals(steady100):
    d, knee = steady100
    m = fit_A((d.theta12(), knee.states()))
    resid = knee.states() - predict_array(m, d.theta12())
    np.testing.assert_allclose(np.sqrt(np.mean(resid**2, axis=0)), m.residual_rms, rtol=1e-12)


def test_linear_map_validation():
    with pytest.raises(DataError):
        LinearKneeMap(np.zeros((2, 4)))
    with pytest.raises(DataError):
        LinearKneeMap(np.full((2, 5), np.nan))
