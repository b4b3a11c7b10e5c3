import json

import numpy as np
import pytest

from aulmpm.cli import _parse_levels, main
from aulmpm.errors import SceneError

SCENE = {
    "grid": {"origin": [0.0, 0.0], "size": [1.0, 1.0], "cells": [20, 20]},
    "gravity": [0.0, -9.81],
    "solver": {"dt": 1e-3, "steps": 6, "frame_dt": 3e-3},
    "objects": [{
        "shape": {"type": "disk", "center": [0.5, 0.5], "radius": 0.1},
        "spacing": 0.02,
        "material": {"type": "fixed_corotated", "density": 1000.0,
                     "youngs": 1e4, "poisson": 0.3},
        "velocity": [0.2, -0.4],
    }],
}


@pytest.fixture
def scene_path(tmp_path):
    p = tmp_path / "scene.json"
    p.write_text(json.dumps(SCENE))
    return p


def test_sim_writes_outputs(scene_path, tmp_path, capsys):
    out = tmp_path / "run"
    rc = main(["sim", str(scene_path), "--out", str(out)])
    assert rc == 0
    assert (out / "summary.json").exists()
    assert (out / "stats.csv").exists()
    assert len(list((out / "frames").glob("*.csv"))) == 3
    printed = json.loads(capsys.readouterr().out)
    assert printed["steps"] == 6


def test_sim_mode_and_transfer_aliases(scene_path, capsys):
    rc = main(["sim", str(scene_path), "--mode", "euler", "--transfer",
               "kernel", "--strict-determinism"])
    assert rc == 0
    printed = json.loads(capsys.readouterr().out)
    assert printed["mode"] == "eulerian"
    assert printed["transfer"] == "kernel"
    assert printed["updates_total"] == 6


def test_sim_frames_override(scene_path, tmp_path):
    out = tmp_path / "short"
    rc = main(["sim", str(scene_path), "--out", str(out), "--frames", "0"])
    assert rc == 0
    assert len(list((out / "frames").glob("*.csv"))) == 1


def test_missing_scene_is_exit_2(tmp_path, capsys):
    rc = main(["sim", str(tmp_path / "absent.json")])
    assert rc == 2
    assert "error" in capsys.readouterr().err


def test_invalid_scene_is_exit_2(tmp_path, capsys):
    bad = dict(SCENE)
    bad["solver"] = {"dt": 1e-3, "steps": 6, "typo": 1}
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(bad))
    rc = main(["sim", str(p)])
    assert rc == 2
    assert "solver" in capsys.readouterr().err


def test_runtime_blowup_is_exit_3(tmp_path, capsys):
    wild = json.loads(json.dumps(SCENE))
    # extreme stiffness with a huge step makes the explicit update blow up
    wild["objects"][0]["material"]["youngs"] = 1e12
    wild["objects"][0]["velocity"] = [0.0, -80.0]
    wild["solver"] = {"dt": 5e-3, "steps": 400}
    p = tmp_path / "wild.json"
    p.write_text(json.dumps(wild))
    rc = main(["sim", str(p)])
    assert rc == 3
    assert "failure" in capsys.readouterr().err


def test_parse_levels():
    assert _parse_levels("4..6") == [16, 32, 64]
    with pytest.raises(SceneError):
        _parse_levels("6")
    with pytest.raises(SceneError):
        _parse_levels("7..4")


def test_converge_command(tmp_path, capsys):
    spin = json.loads(json.dumps(SCENE))
    spin["gravity"] = [0.0, 0.0]
    spin["objects"][0]["velocity"] = [0.0, 0.0]
    spin["objects"][0]["angular_velocity"] = 3.0
    spin["solver"] = {"dt": 1e-3, "steps": 20}
    p = tmp_path / "spin.json"
    p.write_text(json.dumps(spin))
    table = tmp_path / "table.csv"
    rc = main(["converge", str(p), "--levels", "3..4", "--bench-level", "5",
               "--out", str(table)])
    assert rc == 0
    assert "slope" in capsys.readouterr().out
    assert table.exists()


def test_converge_bad_bench_is_exit_2(scene_path, capsys):
    rc = main(["converge", str(scene_path), "--levels", "4..6",
               "--bench-level", "6"])
    assert rc == 2
    capsys.readouterr()


def test_verify_command(capsys):
    rc = main(["verify", "--only", "transfer_identity", "--only",
               "rigid_silence"])
    assert rc == 0
    out = capsys.readouterr().out
    assert out.count("pass") == 2


def test_verify_unknown_check_is_exit_3(capsys):
    rc = main(["verify", "--only", "nope"])
    assert rc == 3
    capsys.readouterr()
