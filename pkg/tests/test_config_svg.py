from __future__ import annotations

import json
import math

import numpy as np
import pytest

from kneesynergy import svg
from kneesynergy.config import PipelineConfig, load_config, with_overrides
from kneesynergy.errors import DataError


def test_defaults_are_valid():
    cfg = PipelineConfig()
    assert cfg.cadences == (85.0, 100.0, 115.0, 130.0)
    assert (cfg.Kp, cfg.Kd, cfg.Kf, cfg.steepness, cfg.limit) == (60.0, 4.0, 30.0, 300.0, 2 * math.pi)


@pytest.mark.parametrize("field, value, needle", [
    ("cadences", [85, 300], r"cadences\[1\]: cadence 300"),
    ("training_cadences", [100], "training_cadences"),
    ("window", 4, "window: must be odd"),
    ("rank", 7, "rank: must be at most 6"),
    ("seed", -1, "seed"),
    ("Kp", 0, "Kp: must be a positive number"),
    ("Kd", -1, "Kd: must be a non-negative"),
    ("fit_mode", "greedy", "fit_mode"),
    ("conditions", ["steady", "sprint"], r"conditions\[1\]"),
    ("condition_cadence", 20, "condition_cadence"),
    ("trials_per_cadence", 0, "trials_per_cadence"),
])
def test_invalid_fields_are_named(tmp_path, field, value, needle):
    (tmp_path / "c.json").write_text(json.dumps({field: value}))
    with pytest.raises(DataError, match=needle):
        load_config(tmp_path / "c.json")


def test_config_file_errors(tmp_path):
    (tmp_path / "c.json").write_text('{"Kq": 1}')
    with pytest.raises(DataError, match="unknown field 'Kq'"):
        load_config(tmp_path / "c.json")
    (tmp_path / "c.json").write_text("{not json")
    with pytest.raises(DataError, match="invalid JSON"):
        load_config(tmp_path / "c.json")
    (tmp_path / "c.json").write_text("[1, 2]")
    with pytest.raises(DataError, match="top level"):
        load_config(tmp_path / "c.json")
    with pytest.raises(DataError, match="cannot read config"):
        load_config(tmp_path / "none.json")


def test_overrides_and_relative_paths(tmp_path):
    (tmp_path / "c.json").write_text('{"seed": 5, "out": "results"}')
    cfg = load_config(tmp_path / "c.json", seed=9, dt=None)
    assert cfg.seed == 9 and cfg.dt is None
    assert cfg.resolve(cfg.out) == tmp_path / "results"
    assert with_overrides(cfg, Kp=80.0, Kd=None).Kp == 80.0


def test_hash_tracks_settings_and_model_file(tmp_path):
    a = PipelineConfig()
    assert a.hash() == PipelineConfig().hash()
    assert a.hash() == with_overrides(a, out="elsewhere").hash()
    assert a.hash() != with_overrides(a, Kp=61.0).hash()
    model = tmp_path / "m.cfg"
    model.write_text("link3.m = 1.0\n")
    b = PipelineConfig(model=str(model))
    h1 = b.hash()
    model.write_text("link3.m = 1.1\n")
    assert b.hash() != h1


def test_nice_ticks():
    assert svg.nice_ticks(0.0, 1.0) == pytest.approx([0.0, 0.2, 0.4, 0.6, 0.8, 1.0])
    assert svg.nice_ticks(83.0, 132.0) == pytest.approx([90.0, 100.0, 110.0, 120.0, 130.0])
    assert svg.nice_ticks(math.nan, 1.0) == []
    assert svg.nice_ticks(2.0, 2.0)


def test_line_chart_is_deterministic_and_escaped():
    t = np.linspace(0, 1, 50)
    a = svg.line_chart([("sin <x>", t, np.sin(t)), ("cos", t, np.cos(t))], title="a & b",
                       vlines=(0.5,), hlines=(0.0,))
    b = svg.line_chart([("sin <x>", t, np.sin(t)), ("cos", t, np.cos(t))], title="a & b",
                       vlines=(0.5,), hlines=(0.0,))
    assert a == b
    assert a.startswith("<svg") and a.rstrip().endswith("</svg>")
    assert a.count("<polyline") == 2 and "a &amp; b" in a and "sin &lt;x&gt;" in a
    dots = svg.line_chart([("pts", [1, 2, 3], [3, 1, 2])], markers=True)
    assert dots.count("<circle") == 3


def test_stick_figure(params, tmp_path):
    q = np.vstack([np.full(25, math.pi / 2), np.full(25, math.pi), np.linspace(5.5, 2 * math.pi, 25)])
    text = svg.stick_figure(params, q, every=10, title="swing")
    # frames 0, 10, 20 and the last one, each drawn as stance leg plus thigh and shank
    assert text.count("<polyline") == 2 * 4
    svg.write(tmp_path / "s.svg", text)
    assert (tmp_path / "s.svg").read_text() == text
