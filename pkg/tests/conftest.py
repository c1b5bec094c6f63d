from __future__ import annotations

import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

from kneesynergy.adaptive import TRAINING_CADENCES, fit_adaptive  # noqa: E402
from kneesynergy.cli import trial_seed  # noqa: E402
from kneesynergy.dynamics import load_params  # noqa: E402
from kneesynergy.gait import detect_events, differentiate, synth_gait  # noqa: E402
from kneesynergy.inertial import optimize_T0  # noqa: E402

settings.register_profile("default", deadline=None, max_examples=50, derandomize=True)
settings.load_profile("default")

TRIALS_PER_CADENCE = 5


@dataclass
class Suite:
    """Synthetic multi-cadence training set with inertial knee targets."""

    params: object
    trials: list = field(default_factory=list)
    knees: list = field(default_factory=list)
    regressor: object = None
    build_seconds: float = 0.0

    def at(self, cadence: float):
        idx = [i for i, d in enumerate(self.trials) if d.base.cadence == cadence]
        return [self.trials[i] for i in idx], [self.knees[i] for i in idx]


def derived(trial):
    d = differentiate(trial)
    return d.with_events(detect_events(d))


@pytest.fixture(scope="session")
def params():
    return load_params()


@pytest.fixture(scope="session")
def suite(params) -> Suite:
    start = time.perf_counter()
    s = Suite(params=params)
    for c in TRAINING_CADENCES:
        for k in range(TRIALS_PER_CADENCE):
            d = derived(synth_gait(c, seed=trial_seed(0, c, k), trial_id=f"c{c:g}_t{k}"))
            s.trials.append(d)
            s.knees.append(optimize_T0(params, d)[1])
    s.regressor = fit_adaptive(s.trials, s.knees)
    s.build_seconds = time.perf_counter() - start
    return s


@pytest.fixture(scope="session")
def steady100(params):
    d = derived(synth_gait(100.0, seed=7, trial_id="steady100"))
    return d, optimize_T0(params, d)[1]


@pytest.fixture(scope="session")
def pipeline_run(tmp_path_factory):
    """Output tree of one cold default ``pipeline`` run, with its wall time."""
    from kneesynergy.cli import main
    out = tmp_path_factory.mktemp("pipeline") / "out"
    start = time.perf_counter()
    assert main(["pipeline", "--out", str(out)]) == 0
    return out, time.perf_counter() - start


_ACCEPTANCE: list[str] = []


@pytest.fixture
def acceptance_line():
    """Record one summary line per acceptance criterion; printed at the end of the run."""
    def record(number: int, ok: bool, detail: str) -> None:
        _ACCEPTANCE.append(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE):
            terminalreporter.write_line(line)


def rng(seed: int = 0) -> np.random.Generator:
    return np.random.default_rng(seed)


def exact_inertial_reference(p, d):
    """Copy of ``d`` whose knee is an exact forward-integrated inertial motion.

    The start state comes from the best-fit inertial motion of ``d`` so the
    reference keeps a realistic flexion dip.
    """
    from kneesynergy.dynamics import knee_acceleration
    from kneesynergy.inertial import SUBSTEPS, KneeState, integrate_knee

    _, traj = optimize_T0(p, d)
    _, xs = integrate_knee(p, d, KneeState(traj.q3[0], traj.q3dot[0]), float(d.t[0]), float(d.t[-1]))
    xs = xs[::SUBSTEPS]
    assert len(xs) == d.n
    acc = [knee_acceleration(p, d.q[:2, i], d.qdot[:2, i], d.qddot[:2, i], xs[i, 0], xs[i, 1])
           for i in range(d.n)]
    ref = d.with_knee(xs[:, 0], xs[:, 1], acc)
    return ref.with_events(detect_events(ref.with_events(None)))


def dip_inertial_reference(p, d):
    """Copy of ``d`` whose knee is the exact inertial motion at rest at the measured flexion dip.

    Anchoring at the dip keeps an interior knee minimum even when the best-fit
    inertial motion of a fast trial starts at its own minimum.
    """
    from kneesynergy.dynamics import knee_acceleration
    from kneesynergy.inertial import KneeState, solve_via_point

    j = d.index_of(d.events.max_flexion)
    traj = solve_via_point(p, d, KneeState(float(d.q[2, j]), 0.0), float(d.t[j]))
    acc = [knee_acceleration(p, d.q[:2, i], d.qdot[:2, i], d.qddot[:2, i], traj.q3[i], traj.q3dot[i])
           for i in range(d.n)]
    ref = d.with_knee(traj.q3, traj.q3dot, acc)
    return ref.with_events(detect_events(ref.with_events(None)))


def frozen_trial(q1: float, q2: float, duration: float = 1.0, dt: float = 0.01):
    """Derived trial whose intact joints hold still."""
    from kneesynergy.gait import GaitTrial
    n = int(round(duration / dt)) + 1
    base = GaitTrial(dt=dt, q1=np.full(n, q1), q2=np.full(n, q2), q3=np.full(n, 6.0), trial_id="frozen")
    return differentiate(base)
