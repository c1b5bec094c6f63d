"""Command-line pipeline: synth -> inertial -> synergy -> fit -> simulate -> report.

Every stage writes into its own directory under ``--out`` together with a
``stage.json`` stamp holding a content hash of the stage's settings and input
files.  A stage whose stamp matches and whose outputs are intact is skipped.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import shutil
import sys
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import __version__, serialize, svg
from .adaptive import (AdaptiveRegressor, adaptive_predict, coeff_trend_r2, estimate_cadence,
                       fit_adaptive, fit_cadence, rms_error)
from .config import PipelineConfig, file_sha256, load_config, with_overrides
from .dynamics import ModelParams, load_params
from .errors import DataError, KneeSynergyError, NumericalError
from .gait import (DerivedTrial, GaitTrial, SynthProfile, detect_events, differentiate, load_csv,
                   read_meta, synth_gait, write_csv, write_meta)
from .inertial import InertialTrajectory, KneeState, optimize_T0, phase_errors
from .simulate import (ControllerGains, DampingParams, final_knee_angle, min_clearance,
                       simulate_swing, torque_phase_stats)
from .synergy import LinearKneeMap, build_data_matrix, decompose, fit_A, knee_samples, synergy_affine

log = logging.getLogger("kneesynergy")

STAGES = ("synth", "inertial", "synergy", "fit", "simulate", "report")
PHASES = ("initial", "mid", "terminal")
_KIND_CODE = {"steady": 0, "initiation": 1, "termination": 2}


def _f(v) -> str:
    return f"{float(v):.17g}"


def _write_rows(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_f(v) if isinstance(v, (float, np.floating)) else v for v in row])


def trial_seed(seed: int, cadence: float, k: int, kind: str = "steady") -> int:
    """Independent per-trial seed derived from the run seed."""
    ss = np.random.SeedSequence([seed, int(round(cadence * 1000)), k, _KIND_CODE[kind]])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


# ---------------------------------------------------------------------------
# stage cache

@dataclass
class Context:
    cfg: PipelineConfig
    out: Path
    params: ModelParams
    config_hash: str

    def stage_dir(self, name: str) -> Path:
        return self.out / name


def _digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def _inventory(d: Path) -> dict[str, str]:
    return {str(p.relative_to(d)): file_sha256(p)
            for p in sorted(d.rglob("*")) if p.is_file() and p.name != "stage.json"}


def _stage_key(ctx: Context, name: str, settings: dict, inputs: Sequence[Path]) -> str:
    def label(p: Path) -> str:
        # inputs inside the output tree are keyed relative to it so the tree can move
        try:
            return str(p.resolve().relative_to(ctx.out.resolve()))
        except ValueError:
            return str(p.resolve())
    files = {label(p): file_sha256(p) for p in sorted(set(inputs))}
    return _digest({"stage": name, "version": __version__, "settings": settings, "inputs": files})


def run_stage(ctx: Context, name: str, settings: dict, inputs: Sequence[Path],
              produce: Callable[[Path], None], subdir: str | None = None) -> bool:
    """Run ``produce(dir)`` unless the stamped key and outputs match; returns True if it ran."""
    d = ctx.stage_dir(subdir or name)
    key = _stage_key(ctx, name, settings, inputs)
    stamp = d / "stage.json"
    if stamp.exists():
        try:
            old = json.loads(stamp.read_text(encoding="utf-8"))
        except json.JSONDecodeError:
            old = {}
        if old.get("key") == key and old.get("outputs") == _inventory(d):
            log.info("%s: up to date, skipped", subdir or name)
            return False
    if d.exists():
        shutil.rmtree(d)
    d.mkdir(parents=True)
    log.info("%s: running", subdir or name)
    produce(d)
    record = {"stage": name, "key": key, "config_hash": ctx.config_hash, "seed": ctx.cfg.seed,
              "outputs": _inventory(d)}
    stamp.write_text(json.dumps(record, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return True


# ---------------------------------------------------------------------------
# loading helpers

def trial_files(directory: Path) -> list[Path]:
    files = sorted(p for p in directory.glob("*.csv"))
    if not files:
        raise DataError(f"no trial CSV files in {directory}")
    return files


def derive(trial: GaitTrial, cfg: PipelineConfig) -> DerivedTrial:
    try:
        d = differentiate(trial, cfg.window)
        return d.with_events(detect_events(d))
    except DataError as exc:
        raise type(exc)(f"trial {trial.trial_id}: {exc}") from exc


def load_trials(paths: Sequence[Path], cfg: PipelineConfig) -> list[DerivedTrial]:
    return [derive(load_csv(p), cfg) for p in paths]


def write_knee(directory: Path, traj: InertialTrajectory) -> None:
    path = directory / f"{traj.trial_id}_knee.csv"
    _write_rows(path, ("t", "q3", "q3dot"), list(zip(traj.t, traj.q3, traj.q3dot)))
    write_meta(path.with_suffix(".meta"), {
        "trial_id": traj.trial_id, "t0_anchor": _f(traj.t0_anchor), "via_q3": _f(traj.via.q3),
        "via_q3dot": _f(traj.via.q3dot), "cost": _f(traj.cost)})


def read_knee(path: Path) -> InertialTrajectory:
    try:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read knee trajectory {path}: {exc}") from exc
    meta = read_meta(path.with_suffix(".meta"))
    try:
        via = KneeState(float(meta["via_q3"]), float(meta["via_q3dot"]))
        t0 = float(meta["t0_anchor"])
    except (KeyError, ValueError):
        raise DataError(f"{path}: metadata lacks the via state") from None
    return InertialTrajectory(t=data[:, 0], q3=data[:, 1], q3dot=data[:, 2], t0_anchor=t0, via=via,
                              cost=float(meta.get("cost", "nan")),
                              trial_id=meta.get("trial_id", path.stem.removesuffix("_knee")))


def knees_for(ctx: Context, trials: Sequence[DerivedTrial], inertial_dir: Path) -> list[InertialTrajectory]:
    out = []
    for d in trials:
        path = inertial_dir / f"{d.base.trial_id}_knee.csv"
        if path.exists():
            out.append(read_knee(path))
        else:
            log.info("trial %s: no stored inertial motion, computing it", d.base.trial_id)
            out.append(optimize_T0(ctx.params, d, dt=ctx.cfg.dt)[1])
    return out


def _by_cadence(trials: Sequence[DerivedTrial]) -> dict[str, list[int]]:
    groups: dict[str, list[int]] = defaultdict(list)
    for i, d in enumerate(trials):
        c = d.base.cadence
        groups["all" if c is None else f"{c:g}"].append(i)
    return dict(sorted(groups.items(), key=lambda kv: (kv[0] == "all", float(kv[0]) if kv[0] != "all" else 0)))


def _svg_note(text: str, ctx: Context) -> str:
    return text.replace("\n", f"\n<!-- config_hash {ctx.config_hash} seed {ctx.cfg.seed} -->\n", 1)


# ---------------------------------------------------------------------------
# stages

def synthesize(cfg: PipelineConfig, directory: Path, kind: str, cadences: Sequence[float],
               trials: int) -> list[Path]:
    profile = SynthProfile(kind=kind, sample_rate=cfg.sample_rate)
    prefix = "" if kind == "steady" else f"{kind}_"
    paths = []
    for c in cadences:
        for k in range(trials):
            tid = f"{prefix}c{c:03g}_t{k:02d}"
            trial = synth_gait(c, profile, seed=trial_seed(cfg.seed, c, k, kind), trial_id=tid)
            path = directory / f"{tid}.csv"
            write_csv(path, trial)
            paths.append(path)
    return paths


def stage_synth(ctx: Context) -> Path:
    cfg = ctx.cfg
    if cfg.data_dir is not None:
        src = cfg.resolve(cfg.data_dir)
        if not src.is_dir():
            raise DataError(f"config field data_dir: {src} is not a directory")
        files = trial_files(src)

        def copy(d: Path):
            for f in files:
                shutil.copyfile(f, d / f.name)
                if f.with_suffix(".meta").exists():
                    shutil.copyfile(f.with_suffix(".meta"), d / f.with_suffix(".meta").name)
        run_stage(ctx, "synth", {"data_dir": str(src)},
                  files + [f.with_suffix(".meta") for f in files if f.with_suffix(".meta").exists()], copy)
    else:
        settings = {k: getattr(cfg, k) for k in ("cadences", "trials_per_cadence", "seed", "sample_rate")}
        run_stage(ctx, "synth", settings, [],
                  lambda d: synthesize(cfg, d, "steady", cfg.cadences, cfg.trials_per_cadence))
    return ctx.stage_dir("synth")


def _model_inputs(cfg: PipelineConfig) -> list[Path]:
    return [cfg.resolve(cfg.model)] if cfg.model is not None else []


def produce_inertial(ctx: Context, trial_paths: Sequence[Path], d_out: Path) -> None:
    rows = []
    trials = load_trials(trial_paths, ctx.cfg)
    by_cad: dict[float, dict[str, list[float]]] = defaultdict(lambda: defaultdict(list))
    for d in trials:
        tid = d.base.trial_id
        try:
            T0, traj = optimize_T0(ctx.params, d, dt=ctx.cfg.dt)
        except KneeSynergyError as exc:
            raise type(exc)(f"trial {tid}: {exc}") from exc
        write_knee(d_out, traj)
        im = traj.to_trial(d.base)
        write_csv(d_out / f"{tid}_im.csv", im)
        errs = phase_errors(d, traj)
        for ph in PHASES:
            a, b = d.events.phases()[ph]
            rows.append((tid, "" if d.base.cadence is None else f"{d.base.cadence:g}", ph, float(a), float(b),
                         errs[ph]))
            if d.base.cadence is not None:
                by_cad[d.base.cadence][ph].append(errs[ph])
        ev = d.events
        chart = svg.line_chart([("reference", d.t, d.q[2]), ("inertial motion", traj.t, traj.q3)],
                               title=f"{tid}: knee angle, T0 = {T0:.3f} s", xlabel="t [s]",
                               ylabel="q3 [rad]", vlines=(ev.max_flexion, ev.max_ext_velocity))
        svg.write(d_out / f"{tid}.svg", _svg_note(chart, ctx))
    _write_rows(d_out / "phase_errors.csv", ("trial_id", "cadence_bpm", "phase", "t_start", "t_end", "delta_q"),
                rows)
    if by_cad:
        cads = sorted(by_cad)
        series = [(ph, cads, [float(np.mean(by_cad[c][ph])) for c in cads]) for ph in PHASES]
        chart = svg.line_chart(series, title="Mean phase error of the inertial motion",
                               xlabel="cadence [bpm]", ylabel="delta q [rad]", markers=True)
        svg.write(d_out / "phase_errors.svg", _svg_note(chart, ctx))


def stage_inertial(ctx: Context, trial_paths: Sequence[Path]) -> Path:
    cfg = ctx.cfg
    settings = {"dt": cfg.dt, "window": cfg.window}
    run_stage(ctx, "inertial", settings, list(trial_paths) + _model_inputs(cfg),
              lambda d: produce_inertial(ctx, trial_paths, d))
    return ctx.stage_dir("inertial")


def _stored_inputs(trial_paths: Sequence[Path], inertial_dir: Path) -> list[Path]:
    extra = []
    for p in trial_paths:
        meta = read_meta(p.with_suffix(".meta"))
        k = inertial_dir / f"{meta.get('trial_id', p.stem)}_knee.csv"
        extra += [k, k.with_suffix(".meta")] if k.exists() else []
    return list(trial_paths) + extra


def produce_synergy(ctx: Context, trial_paths: Sequence[Path], inertial_dir: Path, d_out: Path) -> None:
    cfg = ctx.cfg
    trials = load_trials(trial_paths, cfg)
    knees = knees_for(ctx, trials, inertial_dir)
    contrib_rows, compare_rows = [], []
    for group, idx in _by_cadence(trials).items():
        ts = [trials[i] for i in idx]
        ks = [knees[i] for i in idx]
        m = decompose(build_data_matrix(ts, ks, normalize=cfg.normalize), r=cfg.rank)
        serialize.save(d_out / f"synergy_{group}.model", m)
        ratios = m.contribution()
        cum = np.cumsum(ratios)
        cum[-1] = 1.0 if abs(cum[-1] - 1.0) < 1e-12 else cum[-1]
        for i, (rt, cu) in enumerate(zip(ratios, cum), start=1):
            contrib_rows.append((group, i, float(100 * rt), float(100 * cu)))
        Theta, Y = knee_samples(ts, ks)
        try:
            K, b = synergy_affine(m)
            syn = Theta[:, :4] @ K.T + b
            lsq = fit_A((Theta, Y))(Theta)
            compare_rows.append((group, float(np.sqrt(np.mean((syn[:, 0] - Y[:, 0]) ** 2))),
                                 float(np.sqrt(np.mean((lsq[:, 0] - Y[:, 0]) ** 2))),
                                 float(np.sqrt(np.mean((syn[:, 0] - lsq[:, 0]) ** 2)))))
        except NumericalError as exc:
            log.warning("group %s: synergy map unavailable (%s)", group, exc)
        labels = ("q1", "q1dot", "q2", "q2dot", "q3", "q3dot")
        modes = [(f"u{i + 1}", list(range(1, 7)), m.U[:, i]) for i in range(cfg.rank)]
        chart = svg.line_chart(modes, title=f"Coordination modes, cadence {group}",
                               xlabel="state index (" + ", ".join(labels) + ")", ylabel="u_i", markers=True)
        svg.write(d_out / f"modes_{group}.svg", _svg_note(chart, ctx))
        n0 = ts[0].n
        temporal = [(f"s{i + 1} v{i + 1}", ts[0].t, m.s[i] * m.V[:n0, i]) for i in range(cfg.rank)]
        chart = svg.line_chart(temporal, title=f"Temporal patterns ({ts[0].base.trial_id})",
                               xlabel="t [s]", ylabel="s_i v_i")
        svg.write(d_out / f"temporal_{group}.svg", _svg_note(chart, ctx))
    _write_rows(d_out / "contribution.csv", ("cadence_bpm", "mode", "ratio_percent", "cumulative_percent"),
                contrib_rows)
    _write_rows(d_out / "synergy_vs_lsq.csv",
                ("cadence_bpm", "rms_synergy_map", "rms_least_squares", "rms_difference"), compare_rows)


def stage_synergy(ctx: Context, trial_paths: Sequence[Path], inertial_dir: Path) -> Path:
    cfg = ctx.cfg
    settings = {"rank": cfg.rank, "normalize": cfg.normalize, "window": cfg.window, "dt": cfg.dt}
    run_stage(ctx, "synergy", settings, _stored_inputs(trial_paths, inertial_dir) + _model_inputs(cfg),
              lambda d: produce_synergy(ctx, trial_paths, inertial_dir, d))
    return ctx.stage_dir("synergy")


def produce_fit(ctx: Context, trial_paths: Sequence[Path], inertial_dir: Path, d_out: Path) -> None:
    cfg = ctx.cfg
    trials = load_trials(trial_paths, cfg)
    knees = knees_for(ctx, trials, inertial_dir)
    groups = _by_cadence(trials)
    per_cadence = []
    residual_rows = []
    for group, idx in groups.items():
        A = fit_A(knee_samples([trials[i] for i in idx], [knees[i] for i in idx]))
        serialize.save(d_out / f"A_{group}.model", A)
        residual_rows.append((f"A_{group}", float(A.residual_rms[0]), float(A.residual_rms[1])))
        if group != "all":
            per_cadence.append((float(group), A, trials[idx[0]].base.subject_id))
    if len({c for c, _, _ in per_cadence}) >= 3:
        rep = coeff_trend_r2([(c, A) for c, A, _ in per_cadence], [s or "all" for _, _, s in per_cadence])
        rep.to_csv(d_out / "coeff_r2.csv")
    else:
        log.info("fewer than 3 cadences: coefficient trend table skipped")

    train = [i for i, d in enumerate(trials) if d.base.cadence in cfg.training_cadences]
    if len({trials[i].base.cadence for i in train}) < 2:
        raise DataError("config field training_cadences: fewer than two of them are present in the trials")
    reg = fit_adaptive([trials[i] for i in train], [knees[i] for i in train], mode=cfg.fit_mode)
    serialize.save(d_out / "adaptive.model", reg)
    labeled = [d for d in trials if d.base.cadence is not None]
    est = fit_cadence(labeled)
    serialize.save(d_out / "cadence.model", est)
    scatter = [(d.base.trial_id, float(d.base.cadence), float(estimate_cadence(est, d.theta12_at_toe_off())))
               for d in labeled]
    _write_rows(d_out / "cadence_scatter.csv", ("trial_id", "cadence_bpm", "estimated_bpm"), scatter)

    rms_by: dict[float, list[float]] = defaultdict(list)
    fit_rows = []
    for i in train:
        pred = adaptive_predict(reg, trials[i])
        e = rms_error(pred, knees[i])
        rms_by[trials[i].base.cadence].append(e)
        fit_rows.append((trials[i].base.trial_id, float(trials[i].base.cadence), e))
    Y = np.vstack([knees[i].states() for i in train])
    P = np.vstack([adaptive_predict(reg, trials[i]) for i in train])
    residual_rows.append(("adaptive", float(np.sqrt(np.mean((P[:, 0] - Y[:, 0]) ** 2))),
                          float(np.sqrt(np.mean((P[:, 1] - Y[:, 1]) ** 2)))))
    _write_rows(d_out / "residuals.csv", ("model", "rms_q3", "rms_q3dot"), residual_rows)
    _write_rows(d_out / "rms_trials.csv", ("trial_id", "cadence_bpm", "rms_q3"), fit_rows)
    _write_rows(d_out / "rms.csv", ("cadence_bpm", "mean_rms", "sd_rms", "n_trials"),
                [(float(c), float(np.mean(v)), float(np.std(v, ddof=1)) if len(v) > 1 else 0.0, len(v))
                 for c, v in sorted(rms_by.items())])

    v = np.array([r[1] for r in scatter])
    chart = svg.line_chart([("trials", v, [r[2] for r in scatter]),
                            ("identity", [v.min(), v.max()], [v.min(), v.max()])],
                           title="Measured vs estimated cadence", xlabel="cadence [bpm]",
                           ylabel="estimated [bpm]", markers=True)
    svg.write(d_out / "cadence.svg", _svg_note(chart, ctx))
    for group, idx in groups.items():
        i = idx[0]
        if i not in train:
            continue
        pred = adaptive_predict(reg, trials[i])
        chart = svg.line_chart([("inertial motion", knees[i].t, knees[i].q3),
                                ("adaptive", trials[i].t, pred[:, 0])],
                               title=f"{trials[i].base.trial_id}: generated knee motion",
                               xlabel="t [s]", ylabel="q3 [rad]")
        svg.write(d_out / f"adaptive_{group}.svg", _svg_note(chart, ctx))


def stage_fit(ctx: Context, trial_paths: Sequence[Path], inertial_dir: Path) -> Path:
    cfg = ctx.cfg
    settings = {"training_cadences": cfg.training_cadences, "fit_mode": cfg.fit_mode, "window": cfg.window,
                "dt": cfg.dt}
    run_stage(ctx, "fit", settings, _stored_inputs(trial_paths, inertial_dir) + _model_inputs(cfg),
              lambda d: produce_fit(ctx, trial_paths, inertial_dir, d))
    return ctx.stage_dir("fit")


SUMMARY_HEADER = ("condition", "trial_id", "source", "min_clearance", "final_angle", "lock_time", "collision",
                  "extension_failure") + tuple(f"{s}_{ph}" for s in ("peak", "rms") for ph in PHASES)


def _simulate_one(ctx: Context, condition: str, d: DerivedTrial, source, label: str, d_out: Path) -> tuple:
    cfg = ctx.cfg
    gains = ControllerGains(cfg.Kp, cfg.Kd)
    damping = DampingParams(cfg.Kf, cfg.steepness, cfg.limit)
    tid = d.base.trial_id
    try:
        r = simulate_swing(ctx.params, d, source, gains=gains, damping=damping, dt=cfg.dt)
    except KneeSynergyError as exc:
        raise type(exc)(f"trial {tid} ({label}): {exc}") from exc
    r.to_csv(d_out / f"{tid}_{label}.csv")
    clr = min_clearance(r, ctx.params, d)
    final = final_knee_angle(r)
    try:
        st = torque_phase_stats(r)
        stats = [st[ph][s] for s in ("peak", "rms") for ph in PHASES]
    except DataError:
        stats = [float("nan")] * 6
    chart = svg.line_chart([("simulated", r.t, r.q3), ("desired", r.t, r.q3d), ("reference", d.t, d.q[2])],
                           title=f"{tid} ({label}): knee angle", xlabel="t [s]", ylabel="q3 [rad]",
                           hlines=(cfg.limit,))
    svg.write(d_out / f"{tid}_{label}_angle.svg", _svg_note(chart, ctx))
    chart = svg.line_chart([("tau", r.t, r.tau), ("f_damp", r.t, r.f_damp)],
                           title=f"{tid} ({label}): knee torque", xlabel="t [s]", ylabel="[N m]")
    svg.write(d_out / f"{tid}_{label}_torque.svg", _svg_note(chart, ctx))
    q = np.vstack([d.q[0], d.q[1], r.q3])
    svg.write(d_out / f"{tid}_{label}_stick.svg",
              _svg_note(svg.stick_figure(ctx.params, q, every=cfg.stick_every, title=f"{tid} ({label})"), ctx))
    lock = "" if r.lock_time is None else _f(r.lock_time)
    return (condition, tid, label, clr, final, lock, int(clr <= 0.0),
            int(final < cfg.limit - cfg.extension_tol), *stats)


def produce_simulate(ctx: Context, condition: str, regressor_path: Path, trial_paths: Sequence[Path] | None,
                     inertial_dir: Path, d_out: Path) -> None:
    cfg = ctx.cfg
    reg = serialize.load(regressor_path)
    if not isinstance(reg, (AdaptiveRegressor, LinearKneeMap)):
        raise DataError(f"{regressor_path}: expected an adaptive regressor or a linear knee map")
    if trial_paths is None:
        fixtures = d_out / "trials"
        fixtures.mkdir()
        trial_paths = synthesize(cfg, fixtures, condition, [cfg.condition_cadence], cfg.condition_trials)
    trials = load_trials(trial_paths, cfg)
    rows = [_simulate_one(ctx, condition, d, reg, "adaptive" if isinstance(reg, AdaptiveRegressor) else "map",
                          d_out) for d in trials]
    if condition == "initiation":
        # a map fitted on the initiation trials themselves, for contrast
        knees = knees_for(ctx, trials, inertial_dir) if inertial_dir.exists() else \
            [optimize_T0(ctx.params, d, dt=cfg.dt)[1] for d in trials]
        A = fit_A(knee_samples(trials, knees))
        serialize.save(d_out / "A_initiation.model", A)
        rows += [_simulate_one(ctx, condition, d, A, "initiation_fit", d_out) for d in trials]
    _write_rows(d_out / "summary.csv", SUMMARY_HEADER, rows)


def stage_simulate(ctx: Context, condition: str, regressor_path: Path,
                   trial_paths: Sequence[Path] | None = None) -> Path:
    cfg = ctx.cfg
    settings = {k: getattr(cfg, k) for k in ("Kp", "Kd", "Kf", "steepness", "limit", "dt", "window",
                                            "extension_tol", "stick_every")}
    settings["condition"] = condition
    inputs = [regressor_path] + _model_inputs(cfg)
    if trial_paths is None:
        settings.update(seed=cfg.seed, sample_rate=cfg.sample_rate, cadence=cfg.condition_cadence,
                        trials=cfg.condition_trials)
    else:
        inputs += list(trial_paths)
    inertial_dir = ctx.stage_dir("inertial") / condition
    run_stage(ctx, "simulate", settings, inputs,
              lambda d: produce_simulate(ctx, condition, regressor_path, trial_paths, inertial_dir, d),
              subdir=f"simulate/{condition}")
    return ctx.stage_dir(f"simulate/{condition}")


def _read_summary(path: Path) -> list[dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def produce_report(ctx: Context, d_out: Path) -> None:
    cfg = ctx.cfg
    files = {}
    for name in STAGES[:-1]:
        base = ctx.stage_dir(name)
        if base.exists():
            for p in sorted(base.rglob("*")):
                if p.is_file() and p.name != "stage.json":
                    files[str(p.relative_to(ctx.out))] = file_sha256(p)
    metrics: dict = {}
    contrib = ctx.stage_dir("synergy") / "contribution.csv"
    if contrib.exists():
        rows = _read_summary(contrib)
        metrics["cumulative_rank_r"] = {r["cadence_bpm"]: float(r["cumulative_percent"])
                                        for r in rows if int(r["mode"]) == cfg.rank}
    rms = ctx.stage_dir("fit") / "rms.csv"
    if rms.exists():
        metrics["adaptive_rms"] = {r["cadence_bpm"]: float(r["mean_rms"]) for r in _read_summary(rms)}
    for cond in cfg.conditions:
        s = ctx.stage_dir(f"simulate/{cond}") / "summary.csv"
        if not s.exists():
            continue
        rows = _read_summary(s)
        agg = {}
        for src in sorted({r["source"] for r in rows}):
            sel = [r for r in rows if r["source"] == src]
            agg[src] = {"runs": len(sel),
                        "min_clearance": min(float(r["min_clearance"]) for r in sel),
                        "min_final_angle": min(float(r["final_angle"]) for r in sel),
                        "collisions": sum(int(r["collision"]) for r in sel),
                        "extension_failures": sum(int(r["extension_failure"]) for r in sel)}
        metrics[cond] = agg
    report = {"version": __version__, "config_hash": ctx.config_hash, "seed": cfg.seed,
              "metrics": metrics, "files": files}
    (d_out / "report.json").write_text(json.dumps(report, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    lines = [f"config_hash {ctx.config_hash}", f"seed {cfg.seed}"]
    for k, v in metrics.items():
        lines.append(f"{k}: {json.dumps(v, sort_keys=True)}")
    (d_out / "report.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def stage_report(ctx: Context) -> Path:
    d = ctx.stage_dir("report")
    d.mkdir(parents=True, exist_ok=True)
    produce_report(ctx, d)
    return d


def run_pipeline(cfg: PipelineConfig, out: Path | None = None) -> Path:
    ctx = make_context(cfg, out)
    synth_dir = stage_synth(ctx)
    trials = trial_files(synth_dir)
    inertial_dir = stage_inertial(ctx, trials)
    stage_synergy(ctx, trials, inertial_dir)
    fit_dir = stage_fit(ctx, trials, inertial_dir)
    for cond in cfg.conditions:
        stage_simulate(ctx, cond, fit_dir / "adaptive.model", trials if cond == "steady" else None)
    return stage_report(ctx)


def make_context(cfg: PipelineConfig, out: Path | None = None) -> Context:
    params = load_params(cfg.resolve(cfg.model) if cfg.model is not None else None)
    out = Path(out) if out is not None else cfg.resolve(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return Context(cfg=cfg, out=out, params=params, config_hash=cfg.hash())


# ---------------------------------------------------------------------------
# argument parsing

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    # SUPPRESS keeps a flag given before the subcommand from being reset by the subparser
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", type=Path, help="JSON pipeline configuration")
    common.add_argument("--out", type=Path, help="output directory (default from config: out)")
    common.add_argument("--seed", type=int, help="random seed for synthesis")
    common.add_argument("--dt", type=float, help="integrator step in seconds (default trial dt / 10)")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = _Parser(prog="kneesynergy", description=__doc__.splitlines()[0], parents=[common])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("synth", parents=[common], help="write synthetic gait trials")
    for name, text in (("inertial", "inertial knee motion per trial"),
                       ("synergy", "synergy decomposition and contribution table"),
                       ("fit", "knee maps, adaptive regressor and cadence law")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("trials", nargs="*", type=Path, help="trial CSV files (default: <out>/synth)")
    p = sub.add_parser("simulate", parents=[common], help="closed-loop swing simulation")
    p.add_argument("--condition", choices=("steady", "termination", "initiation"), default="steady")
    p.add_argument("--regressor", type=Path, help="model file (default: <out>/fit/adaptive.model)")
    p.add_argument("trials", nargs="*", type=Path,
                   help="trial CSV files (default: <out>/synth for steady, synthesized fixtures otherwise)")
    sub.add_parser("pipeline", parents=[common], help="run every stage, reusing unchanged ones")
    return ap


def _dispatch(args) -> None:
    cfg = load_config(getattr(args, "config", None), seed=getattr(args, "seed", None),
                      dt=getattr(args, "dt", None))
    out = getattr(args, "out", None)
    if args.command == "pipeline":
        report = run_pipeline(cfg, out)
        print(report / "report.txt")
        return
    ctx = make_context(cfg, out)
    trials = list(getattr(args, "trials", []) or [])
    for t in trials:
        if not t.exists():
            raise DataError(f"trial file {t} does not exist")
    if args.command == "synth":
        print(stage_synth(ctx))
    elif args.command == "inertial":
        print(stage_inertial(ctx, trials or trial_files(ctx.stage_dir("synth"))))
    elif args.command in ("synergy", "fit"):
        trials = trials or trial_files(ctx.stage_dir("synth"))
        stage = stage_synergy if args.command == "synergy" else stage_fit
        print(stage(ctx, trials, ctx.stage_dir("inertial")))
    elif args.command == "simulate":
        reg = args.regressor or ctx.stage_dir("fit") / "adaptive.model"
        if not reg.exists():
            raise DataError(f"regressor file {reg} does not exist (run `fit` first)")
        if not trials and args.condition == "steady":
            trials = trial_files(ctx.stage_dir("synth"))
        print(stage_simulate(ctx, args.condition, reg, trials or None))


def main(argv: Sequence[str] | None = None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        _dispatch(args)
    except NumericalError as exc:
        print(f"kneesynergy: numerical failure: {exc}", file=sys.stderr)
        return 3
    except DataError as exc:
        print(f"kneesynergy: data error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
