#!/usr/bin/env python3
"""
Тесты выходных файлов: JSON, CSV, траектории, манифест
"""

import logging
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))

from artifacts import (
    TOOL_NAME,
    RunManifest,
    dumps,
    format_float,
    read_csv,
    read_json,
    report_csv,
    trajectory_csv,
    write_json,
)
from controls import step_control
from flowbox import FlowBoxChart
from solver import make_grid, pd_solution
from sysmodel import parse_system

logger = logging.getLogger(__name__)


def test_json_numpy_values(tmp_path):
    """numpy массивы и скаляры пишутся как обычные числа"""
    data = {"a": np.array([1.5, 2.0]), "b": np.float64(0.25), "c": np.int64(3), "d": (1, 2)}
    path = write_json(str(tmp_path / "nested" / "report.json"), data)
    assert read_json(path) == {"a": [1.5, 2.0], "b": 0.25, "c": 3, "d": [1, 2]}
    assert dumps({"b": 1, "a": 2}).index(b'"a"') < dumps({"b": 1, "a": 2}).index(b'"b"')


def test_float_format():
    """17 значащих цифр: число восстанавливается точно"""
    value = 1.0 / 3.0
    assert float(format_float(value)) == value
    assert format_float(0.5) == "0.5"


def test_report_csv(tmp_path):
    rows = [{"k": 1, "error": 0.1}, {"k": 2, "error": 0.05}]
    read = read_csv(report_csv(str(tmp_path / "t.csv"), rows))
    assert [r["k"] for r in read] == ["1", "2"]
    assert float(read[1]["error"]) == 0.05


def test_trajectory_csv_has_both_sides(tmp_path):
    """В момент скачка две строки: сначала L, затем R"""
    signal = step_control(0.5, [0.0], [1.0])
    chart = FlowBoxChart(parse_system("n=1;m=1\nf = 0\ng1 = x1\nU = box(-1, 1)\n"))
    traj = pd_solution(chart, [1.0], signal, make_grid(signal, 5))
    rows = read_csv(trajectory_csv(str(tmp_path / "trajectory.csv"), traj))
    assert list(rows[0]) == ["t", "side", "x1", "u1"]
    at_jump = [r for r in rows if float(r["t"]) == 0.5]
    assert [r["side"] for r in at_jump] == ["L", "R"]
    assert float(at_jump[0]["u1"]) == 0.0 and float(at_jump[1]["u1"]) == 1.0
    assert float(at_jump[1]["x1"]) == pytest.approx(np.e * float(at_jump[0]["x1"]), rel=1e-8)


def test_manifest(tmp_path):
    manifest = RunManifest(command="simulate", seed=5, tolerances={"ode_tol": 1e-10})
    manifest.add_output(str(tmp_path / "b.csv"))
    manifest.add_output(str(tmp_path / "a.csv"))
    path = manifest.finish(0).write(str(tmp_path))
    data = read_json(path)
    assert data["tool"] == TOOL_NAME
    assert data["exit_code"] == 0 and data["seed"] == 5
    assert data["outputs"] == sorted(data["outputs"])
    assert data["wall_clock_seconds"] >= 0
