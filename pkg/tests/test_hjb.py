#!/usr/bin/env python3
"""
Тесты гамильтониана и сеточного решения W_K
"""

import logging
import sys
from pathlib import Path

import numpy as np
import pytest
from pydantic import ValidationError

sys.path.insert(0, str(Path(__file__).parent.parent))

from artifacts import read_csv
from errors import DimensionMismatchError
from hjb import (
    CostateVector,
    GridSpec,
    ValueGrid,
    _relax,
    crossvalidate_w,
    hamiltonian,
    pre_hamiltonian,
    solve_w,
)
from mayer import MayerProblem
from sysmodel import CostFunction, control_grid, parse_system

logger = logging.getLogger(__name__)


def costate(p_t=0.0, p_x=(0.0,), p_u=(0.0,), p_k=0.0):
    return CostateVector(p_t, p_x, p_u, p_k)


@pytest.fixture
def frozen_system():
    """f = 0, g = 0: импульсы меняют только u"""
    return parse_system("n=1;m=1\nf = 0\ng1 = 0\nU = box(-1, 1)\n")


def small_spec(**overrides):
    data = {"x_lo": [0.0], "x_hi": [3.0], "per_axis": 21, "time_steps": 20}
    data.update(overrides)
    return GridSpec.model_validate(data)


def test_hamiltonian_zero_costate(toy_system):
    """p = 0: максимум 0 в нулевой вершине"""
    value = hamiltonian(toy_system, 0.0, [1.0], [0.0], 0.0, costate())
    assert value.value == 0.0
    assert value.w0 == 0.0 and value.w == (0.0,)


def test_hamiltonian_examples(toy_system):
    # p_t = 2: дрейф, H = 2 при w0 = 1
    drift = hamiltonian(toy_system, 0.0, [1.0], [0.0], 0.0, costate(p_t=2.0))
    assert drift.value == pytest.approx(2.0) and drift.w0 == 1.0

    # |B| = 1, p_k = -3: импульс невыгоден
    idle = hamiltonian(toy_system, 0.0, [1.0], [0.0], 0.0, costate(p_u=(1.0,), p_k=-3.0))
    assert idle.value == 0.0 and idle.w == (0.0,)

    # p_x = 1 в x = 1: дрейф x v дает 1 при v = 1, импульс sigma x + p_k
    both = hamiltonian(toy_system, 0.0, [1.0], [0.0], 0.0, costate(p_x=(1.0,), p_k=0.5))
    assert both.value == pytest.approx(1.5)
    assert both.w == (1.0,) and both.w0 == 0.0


def test_hamiltonian_ties(toy_system):
    """Равенство дрейфа и импульса: остается дрейф"""
    value = hamiltonian(toy_system, 0.0, [1.0], [0.0], 0.0, costate(p_t=1.0, p_u=(1.0,)))
    assert value.value == pytest.approx(1.0)
    assert value.w0 == 1.0 and value.w == (0.0,)


def test_hamiltonian_matches_brute_force(toy_system, translation_system):
    """Максимум по вершинам не меньше значения в случайных точках симплекса"""
    rng = np.random.default_rng(0)
    for system in (toy_system, translation_system):
        n, m = system.n, system.m
        v_points = control_grid(system.V, system.l)
        for _ in range(25):
            p = CostateVector(rng.normal(), rng.normal(size=n), rng.normal(size=m), rng.normal())
            x, u = rng.uniform(-1, 1, n), rng.uniform(-1, 1, m)
            best = hamiltonian(system, 0.0, x, u, 0.0, p)
            vertex = pre_hamiltonian(system, 0.0, x, u, 0.0, p, best.w0, best.w, best.v)
            assert vertex == pytest.approx(best.value, abs=1e-12)
            for _ in range(30):
                weights = rng.dirichlet(np.ones(m + 2))[:m + 1]
                signs = rng.choice([-1.0, 1.0], m)
                v = v_points[rng.integers(len(v_points))]
                sample = pre_hamiltonian(system, 0.0, x, u, 0.0, p, weights[0], signs * weights[1:], v)
                assert sample <= best.value + 1e-12


@pytest.mark.parametrize("factor", [2.0, 10.0])
def test_hamiltonian_homogeneous(toy_system, factor):
    p = CostateVector(0.3, (-0.7,), (0.2,), -0.1)
    base = hamiltonian(toy_system, 0.0, [0.8], [0.4], 0.0, p).value
    assert hamiltonian(toy_system, 0.0, [0.8], [0.4], 0.0, p.scaled(factor)).value == pytest.approx(factor * base)


def test_pre_hamiltonian_examples(toy_system, frozen_system):
    shift = parse_system("n=1;m=1\nf = 0\ng1 = 1\nU = box(-1, 1)\n")
    assert pre_hamiltonian(shift, 0.0, [0.0], [0.0], 0.0, costate(p_x=(1.0,)), 0.0, [1.0]) == pytest.approx(1.0)
    assert pre_hamiltonian(toy_system, 0.0, [1.0], [0.0], 0.0, costate(p_x=(1.0,)), 1.0, [0.0], [1.0]) == \
        pytest.approx(1.0)
    with pytest.raises(ValueError):
        pre_hamiltonian(frozen_system, 0.0, [0.0], [0.0], 0.0, costate(), -0.1, [0.0])
    with pytest.raises(DimensionMismatchError):
        hamiltonian(frozen_system, 0.0, [0.0], [0.0], 0.0, costate(p_x=(1.0, 2.0)))


def test_grid_spec():
    spec = small_spec()
    coarse = spec.coarsened(1)
    assert (coarse.per_axis, coarse.time_steps) == (11, 10)
    assert spec.coarsened(0) == spec
    with pytest.raises(ValidationError):
        GridSpec(x_lo=[1.0], x_hi=[0.0])


def test_w_without_dynamics(frozen_system):
    """f = g = 0, psi зависит только от x: W = psi"""
    problem = MayerProblem(frozen_system, CostFunction("x1^2", 1, 1), np.array([1.0]), np.array([0.0]))
    grid = solve_w(problem, 1.0, small_spec(x_lo=[-1.0], x_hi=[1.0], per_axis=11, time_steps=4))
    for x in grid.axes[1]:
        for u in grid.axes[2]:
            assert grid.value_at([x], [u], 0.0) == pytest.approx(x ** 2, abs=1e-12)


def test_w_constant_psi(toy_system):
    problem = MayerProblem(toy_system, CostFunction("2", 1, 1), np.array([1.0]), np.array([1.0]))
    grid = solve_w(problem, 0.5, small_spec(per_axis=11, time_steps=5))
    assert np.allclose(grid.values, 2.0)


def test_w_toy(toy_problem):
    """W_2(0, 1, 1, 0) близко к V_BV_2 = e^{-4}; срез t = b равен psi; W не убывает по k"""
    grid = solve_w(toy_problem, 2.0, small_spec())
    w = grid.value_at([1.0], [1.0], 0.0)
    logger.info(f"📊 W_2 = {w:.6g}, e^-4 = {np.exp(-4.0):.6g}")
    assert abs(w - np.exp(-4.0)) < 0.05
    assert grid.diagnostics["monotone_in_k"]
    assert grid.is_monotone_in_k()

    x_axis, u_axis = grid.axes[1], grid.axes[2]
    expected = np.broadcast_to((x_axis ** 2)[:, None], (x_axis.size, u_axis.size))
    for j in range(grid.axes[-1].size):
        assert np.allclose(grid.values[-1, :, :, j], expected)

    # без бюджета импульсов u не меняется: W_0 = psi при v = 0
    no_budget = solve_w(toy_problem, 0.0, small_spec(time_steps=4))
    assert no_budget.axes[-1].size == 1
    assert no_budget.value_at([1.0], [1.0]) == pytest.approx(1.0, abs=0.02)
    with pytest.raises(ValueError):
        solve_w(toy_problem, -1.0, small_spec())


def test_w_binary_and_csv(toy_problem, tmp_path):
    grid = solve_w(toy_problem, 0.3, small_spec(per_axis=6, time_steps=3))
    path = grid.save_binary(str(tmp_path / "w.bin"))
    again = ValueGrid.load_binary(path)
    assert (again.n, again.m) == (1, 1)
    assert np.array_equal(again.values, grid.values)
    for a, b in zip(again.axes, grid.axes):
        assert np.array_equal(a, b)

    rows = read_csv(grid.export_slice_csv(str(tmp_path / "slice.csv"), t_index=0, k_index=0))
    assert len(rows) == 36
    assert set(rows[0]) == {"x1", "u1", "W"}

    (tmp_path / "bad.bin").write_bytes(b"NOTAGRID")
    with pytest.raises(ValueError):
        ValueGrid.load_binary(str(tmp_path / "bad.bin"))


def test_crossvalidate_three_levels(toy_problem):
    """Три сетки: разница |W_1 - V_BV_1| убывает и на самой мелкой не больше 5e-2"""
    spec = small_spec(x_lo=[0.0], x_hi=[2.0], per_axis=41, time_steps=4)
    report = crossvalidate_w(toy_problem, 1.0, spec, 300, seed=0, levels=3, tol=0.05, threads=1, pieces=2)
    assert [row["per_axis"] for row in report.levels] == [11.0, 21.0, 41.0]
    assert report.v_bv == pytest.approx(np.exp(-2.0), abs=1e-3)
    differences = [row["difference"] for row in report.levels]
    logger.info(f"📊 |W - V| по уровням: {differences}")
    assert report.shrinking
    assert report.final_difference <= 0.05
    assert report.passed
    assert set(report.to_dict()) >= {"levels", "final_difference", "passed"}


def test_sweeps_never_increase_slices(toy_problem):
    """Каждый проход релаксации только уменьшает срез: рост за проход равен нулю"""
    grid = solve_w(toy_problem, 1.0, small_spec(per_axis=11, time_steps=3))
    assert grid.diagnostics["max_sweep_increase"] == 0.0
    assert grid.diagnostics["max_sweeps_used"] >= 1


def test_relax_reports_increase():
    """_relax возвращает число проходов и наибольший рост среза"""
    axes = [np.linspace(0.0, 1.0, 3), np.linspace(-1.0, 1.0, 3)]
    mesh = np.meshgrid(*axes, indexing="ij")
    nodes = np.stack([a.ravel() for a in mesh], axis=-1)
    values = np.repeat((1.0 + nodes[:, :1]), 2, axis=1)
    values[:, 1] = 0.0
    mask = np.ones(nodes.shape[0], dtype=bool)
    sweeps, increase = _relax(values, axes, [(nodes, mask)], 1e-12, 5)
    assert increase == 0.0
    assert sweeps == 2
    assert np.allclose(values[:, 0], 0.0)


def test_characteristic_solvers(toy_problem):
    """Эйлер и RK4 по характеристикам дают W_2 около e^{-4}; выбор записан в диагностику"""
    for solver in ("euler", "rk4"):
        grid = solve_w(toy_problem, 2.0, small_spec(characteristic_solver=solver))
        assert abs(grid.value_at([1.0], [1.0], 0.0) - np.exp(-4.0)) < 0.05
        assert grid.diagnostics["characteristic_solver"] == solver
    with pytest.raises(ValidationError):
        small_spec(characteristic_solver="midpoint")
