#!/usr/bin/env python3
"""
Тесты командной строки: коды выхода, выходные файлы, манифест
"""

import logging
import os
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))

from artifacts import read_csv, read_json
from config import config
from main import EXIT_FAILED, EXIT_OK, EXIT_PARSE, main

logger = logging.getLogger(__name__)

DATA_DIR = Path(__file__).parent.parent / "data"
TOY_DSL = str(DATA_DIR / "toy_system.dsl")


@pytest.fixture(autouse=True)
def isolated_logs(tmp_path, monkeypatch):
    """Лог-файл каждого запуска во временном каталоге"""
    monkeypatch.setattr(config, "log_file", str(tmp_path / "logs" / "impulse_lab.log"))


def run(out_dir, *argv):
    return main(["--out-dir", out_dir, *argv])


def manifest_of(out_dir):
    return read_json(os.path.join(out_dir, "manifest.json"))


def test_check_toy(out_dir):
    assert run(out_dir, "check", TOY_DSL, "--samples", "32") == EXIT_OK
    report = read_json(os.path.join(out_dir, "hypotheses.json"))
    assert all(report["passed"].values())
    manifest = manifest_of(out_dir)
    assert manifest["command"] == "check"
    assert manifest["exit_code"] == EXIT_OK
    assert manifest["inputs"]["system"] == TOY_DSL


def test_check_non_commuting(out_dir, tmp_path):
    path = tmp_path / "twist.dsl"
    path.write_text("n=2;m=2\nf = (0, 0)\ng1 = (1, 0)\ng2 = (0, x1)\nU = box((-1, -1), (1, 1))\n")
    assert run(out_dir, "check", str(path), "--samples", "32") == EXIT_FAILED
    report = read_json(os.path.join(out_dir, "hypotheses.json"))
    assert report["passed"]["commutativity"] is False


def test_malformed_dsl(out_dir, tmp_path):
    """Ошибка разбора: код 2, манифест все равно записан"""
    path = tmp_path / "broken.dsl"
    path.write_text("n=1;m=1\nf = x1 +\ng1 = 1\n")
    assert run(out_dir, "check", str(path)) == EXIT_PARSE
    assert manifest_of(out_dir)["exit_code"] == EXIT_PARSE


def test_missing_input(out_dir):
    assert run(out_dir, "check", str(DATA_DIR / "no_such.dsl")) == EXIT_PARSE


def test_simulate_toy(out_dir):
    code = run(out_dir, "simulate", TOY_DSL, str(DATA_DIR / "toy_control.json"), "--x-bar", "1", "--points", "21")
    assert code == EXIT_OK
    rows = read_csv(os.path.join(out_dir, "trajectory.csv"))
    assert rows[0]["side"] == "R"
    assert [r["side"] for r in rows if float(r["t"]) == 0.5] == ["L", "R"]
    assert float(rows[-1]["x1"]) == pytest.approx(0.6065306597, rel=1e-6)
    assert os.path.join(out_dir, "trajectory.csv") in manifest_of(out_dir)["outputs"]


def test_simulate_malformed_control(out_dir, tmp_path):
    path = tmp_path / "bad.json"
    path.write_bytes(b'{"horizon": [0, 1], "u_pieces": "nope"}')
    assert run(out_dir, "simulate", TOY_DSL, str(path)) == EXIT_PARSE


def test_study_equivalence(out_dir):
    code = run(out_dir, "study", "equivalence", TOY_DSL, str(DATA_DIR / "step_control.json"))
    assert code == EXIT_OK
    assert read_json(os.path.join(out_dir, "study.json"))["passed"] is True


def test_study_requires_control(out_dir):
    assert run(out_dir, "study", "density", TOY_DSL) == EXIT_FAILED


def test_optimize(out_dir):
    code = run(out_dir, "--seed", "3", "optimize", str(DATA_DIR / "toy_problem.json"),
               "--class", "AC", "--budget", "100")
    assert code == EXIT_OK
    report = read_json(os.path.join(out_dir, "value_report.json"))
    assert report["class"] == "AC" and report["seed"] == 3
    assert report["evals"] <= 100


def test_reach(out_dir):
    code = run(out_dir, "reach", str(DATA_DIR / "toy_problem.json"), "--classes", "L1", "AC", "-n", "12")
    assert code == EXIT_OK
    cloud = read_csv(os.path.join(out_dir, "cloud_L1.csv"))
    assert len(cloud) == 12
    assert list(cloud[0]) == ["x1", "u1", "K", "seed"]
    rows = read_csv(os.path.join(out_dir, "hausdorff.csv"))
    assert (rows[0]["A"], rows[0]["B"]) == ("L1", "AC")


def test_hjb_without_crossvalidation(out_dir):
    code = run(out_dir, "hjb", str(DATA_DIR / "toy_problem.json"), "--K", "1",
               "--per-axis", "11", "--time-steps", "5", "--skip-crossvalidate")
    assert code == EXIT_OK
    assert os.path.exists(os.path.join(out_dir, "w_grid.bin"))
    assert read_json(os.path.join(out_dir, "w_grid.json"))["K"] == 1.0
    assert len(read_csv(os.path.join(out_dir, "w_slice_t0_k0.csv"))) == 121
