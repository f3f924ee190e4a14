import json

import numpy as np
import pytest

from config_io import (
    CHECKPOINT_FILE, config_hash, load_config, load_trajectory, parse_config, parse_lab_config, read_checkpoint,
    read_csv, read_shot_center, save_trajectory, write_checkpoint, write_csv,
)
from errors import ConfigError, ParameterError
from models import GridField, ModeSample, Trajectory

NO_ENV = {}


# ── parsing ──────────────────────────────────

def test_minimal_config_resolves():
    params, run, shrink, options = parse_config("p=5\nmu=1.0\n", NO_ENV)
    assert params.p == 5.0 and params.mu == 1.0
    assert shrink.gamma == pytest.approx(2.45)
    assert run.dy == 0.1
    assert options.s0 == 15.0


def test_comments_lists_and_none():
    lab = parse_lab_config("# lab\np = 5   # exponent\nstability_eps = 1e-2, 1e-3\nx0 = none\n", NO_ENV)
    assert lab.options.stability_eps == [1e-2, 1e-3]
    assert lab.options.x0 is None


def test_small_p_is_a_parameter_error():
    with pytest.raises(ParameterError, match="requires p > 3"):
        parse_config("p=2.5\n", NO_ENV)


@pytest.mark.parametrize("text, line", [
    ("p=5\nfoo=1\n", 2),
    ("p 5\n", 1),
    ("p=5\n\np=6\n", 3),
    ("mu=1\ndy=abc\n", 2),
    ("chi_profile=bogus\n", 1),
])
def test_config_errors_carry_the_line(text, line):
    with pytest.raises(ConfigError) as info:
        parse_lab_config(text, NO_ENV)
    assert info.value.line == line
    assert f"line {line}" in info.value.message


def test_out_of_range_values_are_parameter_errors():
    with pytest.raises(ParameterError):
        parse_lab_config("dy=-0.1\n", NO_ENV)
    with pytest.raises(ParameterError):
        parse_config("gamma_epsilon=0.3\n", NO_ENV)


def test_environment_overrides_the_file():
    lab = parse_lab_config("p=5\n", {"BLOWUP_LAB_P": "7", "BLOWUP_LAB_DY": "0.05"})
    assert lab.p == 7.0
    assert lab.run.dy == 0.05


def test_missing_file_is_a_config_error(tmp_path):
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "absent.conf"), NO_ENV)


# ── shot log handoff ─────────────────────

def _shot_log(path, center):
    path.write_text(json.dumps({"center": center, "best": None, "levels": []}), encoding="utf-8")
    return path


def test_shot_log_supplies_the_center(tmp_path):
    log = _shot_log(tmp_path / "shoot_log.json", [0.25, -0.5])
    lab = parse_lab_config(f"shot_log={log}\n", NO_ENV)
    assert (lab.options.d0, lab.options.d1) == (0.25, -0.5)
    first = lab.config_hash

    _shot_log(log, [0.125, -0.5])
    assert parse_lab_config(f"shot_log={log}\n", NO_ENV).config_hash != first


def test_shot_log_and_explicit_center_conflict(tmp_path):
    log = _shot_log(tmp_path / "shoot_log.json", [0.25, -0.5])
    with pytest.raises(ConfigError) as info:
        parse_lab_config(f"d0=0\nshot_log={log}\n", NO_ENV)
    assert info.value.line == 1
    with pytest.raises(ConfigError):
        parse_lab_config(f"shot_log={log}\n", {"BLOWUP_LAB_D1": "0.1"})


@pytest.mark.parametrize("content", [
    "{not json",
    "[]",
    json.dumps({"center": [1.0]}),
    json.dumps({"center": ["a", 0]}),
])
def test_malformed_shot_logs_are_config_errors(tmp_path, content):
    log = tmp_path / "shoot_log.json"
    log.write_text(content, encoding="utf-8")
    with pytest.raises(ConfigError):
        read_shot_center(log)


def test_missing_shot_log_is_a_config_error(tmp_path):
    with pytest.raises(ConfigError):
        parse_lab_config(f"shot_log={tmp_path / 'absent.json'}\n", NO_ENV)


# ── hash ─────────────────────────────────────

def test_hash_ignores_layout_and_runtime_knobs():
    a = parse_lab_config("p=5\nmu=1\n", NO_ENV)
    b = parse_lab_config("# same model\nmu = 1.0\np = 5.0\nthreads = 8\nresume = true\n", NO_ENV)
    c = parse_lab_config("p=7\nmu=1\n", NO_ENV)
    assert a.config_hash == b.config_hash == config_hash(a)
    assert a.config_hash != c.config_hash
    assert len(a.config_hash) == 64


# ── files ────────────────────────────────────

def test_csv_keeps_full_precision(tmp_path):
    value = 0.1 + 0.2
    write_csv(tmp_path / "t.csv", [{"x": value, "y": float("nan")}])
    table = read_csv(tmp_path / "t.csv")
    assert table["x"][0] == value
    assert np.isnan(table["y"][0])


def _trajectory() -> Trajectory:
    fields = [GridField.from_function(lambda y, k=k: k * np.exp(-y * y), 10.0 + k, 3.0, 0.5) for k in range(3)]
    series = [ModeSample(s=10.0 + 0.5 * i, v0=0.1 * i, v1=0.0, v2=-0.01, norm_minus_weighted=0.0,
                         norm_e=0.0, sup_v=0.1 * i) for i in range(5)]
    return Trajectory(s0=10.0, snapshots=fields, series=series)


def test_trajectory_directory(tmp_path):
    traj = _trajectory()
    written = save_trajectory(tmp_path, traj)
    assert "timeseries.csv" in written and "snapshots/snapshot_00002.csv" in written

    loaded = load_trajectory(tmp_path)
    assert loaded.s0 == 10.0
    assert [f.s for f in loaded.snapshots] == [10.0, 11.0, 12.0]
    assert np.array_equal(loaded.snapshots[2].values, traj.snapshots[2].values)
    assert [row.v0 for row in loaded.series] == [row.v0 for row in traj.series]


def test_trajectory_directory_must_exist(tmp_path):
    with pytest.raises(ConfigError):
        load_trajectory(tmp_path / "nothing")


def test_checkpoint_truncates_and_checks_hash(tmp_path):
    traj = _trajectory()
    field = traj.snapshots[1]
    write_checkpoint(tmp_path, field, traj, "a" * 64)
    assert (tmp_path / CHECKPOINT_FILE).exists()

    restored_field, restored = read_checkpoint(tmp_path, "a" * 64)
    assert restored_field.s == 11.0
    assert np.array_equal(restored_field.values, field.values)
    assert max(row.s for row in restored.series) <= 11.0
    assert [f.s for f in restored.snapshots] == [10.0, 11.0]

    with pytest.raises(ConfigError):
        read_checkpoint(tmp_path, "b" * 64)
    assert read_checkpoint(tmp_path / "empty", "a" * 64) is None
