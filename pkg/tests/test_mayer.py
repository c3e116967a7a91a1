#!/usr/bin/env python3
"""
Тесты задачи Майера: параметризации классов, поиск, собственное расширение
и облака достижимых точек
"""

import logging
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))

from errors import ControlValidationError, SearchFailedError
from mayer import (
    ControlParameterization,
    MayerProblem,
    cloud_inclusion,
    cloud_spacing,
    estimate_value,
    hausdorff_distance,
    load_problem,
    parse_problem,
    pattern_search,
    proper_extension_check,
    sample_reachable,
    simulate_terminal,
)
from spacetime import SpaceTimeControl, total_variation
from sysmodel import CostFunction, parse_system

logger = logging.getLogger(__name__)

DATA_DIR = Path(__file__).parent.parent / "data"
E4 = np.exp(-4.0)


@pytest.fixture
def shift_problem():
    """f = 0, g = 1 без v: x(b) = x_bar + u(b) - u_bar"""
    system = parse_system("n=1;m=1\nf = 0\ng1 = 1\nU = box(-1, 1)\n")
    return MayerProblem(system, CostFunction("x1^2", 1, 1), np.array([0.5]), np.array([0.0]))


def test_problem_validation(toy_system):
    psi = CostFunction("x1^2", 1, 1)
    with pytest.raises(ControlValidationError):
        MayerProblem(toy_system, psi, np.array([1.0]), np.array([2.0]))
    with pytest.raises(ControlValidationError):
        MayerProblem(toy_system, psi, np.array([1.0, 0.0]), np.array([0.0]))


def test_parameterization_options(toy_problem):
    """Бюджетные классы требуют K >= 0, неизвестный класс отвергается"""
    with pytest.raises(ValueError):
        ControlParameterization.for_problem(toy_problem, "U_K")
    with pytest.raises(ValueError):
        ControlParameterization.for_problem(toy_problem, "AC_K", K=-1.0)
    with pytest.raises(ValueError):
        ControlParameterization.for_problem(toy_problem, "BV")
    # L1: 3 значения u и 2 значения v; U_K: еще 2 веса времени
    assert ControlParameterization.for_problem(toy_problem, "L1", pieces=2).dim == 5
    assert ControlParameterization.for_problem(toy_problem, "AC", pieces=2).dim == 4
    assert ControlParameterization.for_problem(toy_problem, "U_K", K=1.0, pieces=2).dim == 6


def test_decoded_controls_are_admissible(toy_problem):
    """Случайные theta дают управления из своих классов"""
    rng = np.random.default_rng(5)
    ac_k = ControlParameterization.for_problem(toy_problem, "AC_K", K=0.5, pieces=4)
    u_k = ControlParameterization.for_problem(toy_problem, "U_K", K=0.5, pieces=4)
    plus = ControlParameterization.for_problem(toy_problem, "U_K_plus", K=0.5, pieces=4)
    for _ in range(20):
        signal = ac_k.decode(rng.random(ac_k.dim))
        assert signal.is_ac
        assert signal.u(0.0) == pytest.approx([1.0])
        assert total_variation(signal) <= 0.5 + 1e-9

        stc = u_k.decode(rng.random(u_k.dim))
        assert isinstance(stc, SpaceTimeControl)
        assert np.all(stc.slope_sums() <= stc.budget * (1 + 1e-9))
        assert stc.u(0.0) == pytest.approx([1.0])

        assert plus.decode(rng.random(plus.dim)).is_plus


def test_l1_initial_jump_from_u_bar(toy_problem):
    """u(a) != u_bar: x_bar сначала прыгает по g"""
    param = ControlParameterization.for_problem(toy_problem, "L1", pieces=2)
    theta = np.zeros(param.dim)   # u = -1 везде, v = 0
    terminal = simulate_terminal(toy_problem, param.decode(theta), ode_tol=1e-10)
    assert terminal == pytest.approx([np.exp(-2.0), -1.0], rel=1e-7)


def test_constant_psi(toy_system):
    """Постоянная psi: значение равно константе"""
    problem = MayerProblem(toy_system, CostFunction("3", 1, 1), np.array([1.0]), np.array([0.0]))
    report = estimate_value(problem, ControlParameterization.for_problem(problem, "L1", pieces=2), 100, seed=0)
    assert report.best_value == pytest.approx(3.0)


@pytest.mark.parametrize("cls", ["L1", "AC"])
def test_toy_value(toy_problem, cls):
    """V_L1 = V_AC = e^{-4}"""
    param = ControlParameterization.for_problem(toy_problem, cls, pieces=2)
    report = estimate_value(toy_problem, param, 300, seed=0, ode_tol=1e-9)
    assert report.best_value == pytest.approx(E4, abs=1e-5)
    assert report.evals <= 300
    logger.info(f"✅ V_{cls} ~ {report.best_value:.9g}")


def test_toy_bv_value(toy_problem):
    """Вариация не больше K = 1: u(b) >= 0, V_BV_1 = e^{-2}"""
    param = ControlParameterization.for_problem(toy_problem, "U_K", K=1.0, pieces=2)
    report = estimate_value(toy_problem, param, 300, seed=0, ode_tol=1e-9)
    assert report.best_value == pytest.approx(np.exp(-2.0), abs=1e-4)
    assert report.best_value >= np.exp(-2.0) - 1e-6


def test_search_is_deterministic(toy_problem):
    param = ControlParameterization.for_problem(toy_problem, "AC", pieces=2)
    first = estimate_value(toy_problem, param, 150, seed=11, threads=1)
    second = estimate_value(toy_problem, param, 150, seed=11, threads=4)
    assert first.best_value == second.best_value
    assert first.best_control == second.best_control
    with pytest.raises(ValueError):
        estimate_value(toy_problem, param, 99)


def test_pattern_search_quadratic():
    """Минимум (x - 0.3)^2 + (y - 0.7)^2 на квадрате"""
    target = np.array([0.3, 0.7])
    result = pattern_search(lambda x: float(np.sum((x - target) ** 2)), 2, 400, np.random.default_rng(0), threads=1)
    assert result.value < 1e-6
    assert result.evals <= 400


def test_pattern_search_all_failures():
    def broken(theta):
        raise FloatingPointError("нет решения")

    with pytest.raises(SearchFailedError):
        pattern_search(broken, 2, 20, np.random.default_rng(0), threads=1)


def test_proper_extension(toy_problem):
    """V_AC = V_L1, V_BV_K не растет по K и при K = 2 равно V_L1"""
    report = proper_extension_check(toy_problem, 300, [0.5, 2.0], seed=0, tol_value=1e-3, pieces=2)
    assert report.passed, report.notes
    assert report.bv_values[0][1] == pytest.approx(np.exp(-1.0), abs=1e-3)
    with pytest.raises(ValueError):
        proper_extension_check(toy_problem, 300, [1.0, 0.5])


def test_hausdorff_and_inclusion():
    a = np.array([[0.0, 0.0]])
    b = np.array([[0.0, 0.0], [1.0, 0.0]])
    assert hausdorff_distance(a, b) == pytest.approx((0.0, 1.0))
    assert cloud_spacing(b) == pytest.approx(1.0)
    inside = cloud_inclusion(a, np.array([[0.05, 0.0]]), 0.1)
    assert inside["included"] and inside["fraction_inside"] == 1.0
    assert not cloud_inclusion(b, a, 0.1)["included"]


def test_reachable_cloud_on_curve(shift_problem):
    """Для сдвига x(b) - u(b) = x_bar - u_bar во всех точках облака"""
    cloud = sample_reachable(shift_problem, "L1", None, 40, seed=2, pieces=3)
    assert len(cloud) == 40 and cloud.failures == 0
    assert cloud.points[:, 0] - cloud.points[:, 1] == pytest.approx(np.full(40, 0.5), abs=1e-7)


def test_reachable_cloud_prefix(shift_problem):
    """Первые N точек облака размера 2N совпадают с облаком размера N"""
    small = sample_reachable(shift_problem, "AC", None, 8, seed=4, pieces=2)
    large = sample_reachable(shift_problem, "AC", None, 16, seed=4, pieces=2)
    assert np.array_equal(large.points[:8], small.points)
    with pytest.raises(ValueError):
        sample_reachable(shift_problem, "AC", None, 0)


def test_bv_cloud_inside_l1_cloud(shift_problem):
    """Облако U_K лежит на той же прямой, что и облако L1"""
    l1 = sample_reachable(shift_problem, "L1", None, 60, seed=1, pieces=2)
    bv = sample_reachable(shift_problem, "U_K", 2.0, 20, seed=1, pieces=2)
    result = cloud_inclusion(bv, l1, 0.2)
    assert result["included"], result


def test_clouds_grow_with_budget(shift_problem):
    """Облако при K = 0.5 лежит в окрестности облака при K = 2"""
    small = sample_reachable(shift_problem, "U_K", 0.5, 40, seed=3, pieces=2)
    large = sample_reachable(shift_problem, "U_K", 2.0, 200, seed=3, pieces=2)
    assert np.all(np.abs(small.points[:, 1]) <= 0.5 + 1e-9)
    result = cloud_inclusion(small, large, 0.1)
    assert result["included"], result
    logger.info(f"📊 K=0.5 в K=2: max расстояние {result['max_distance']:.3e}")


def test_load_problem_file():
    problem, model = load_problem(str(DATA_DIR / "toy_problem.json"))
    assert problem.system.n == 1 and problem.system.l == 1
    assert model.control_class == "L1"
    assert model.K_list == [0.5, 1.0, 2.0, 4.0]
    assert problem.cost(np.array([2.0, 0.0])) == pytest.approx(4.0)


def test_parse_problem_errors():
    with pytest.raises(ControlValidationError):
        parse_problem(b'{"system": "x.dsl"}', str(DATA_DIR))
    with pytest.raises(ControlValidationError):
        parse_problem(b'{"system": "toy_system.dsl", "psi": "x1", "x_bar": [1], "u_bar": [0], "class": "H1"}',
                      str(DATA_DIR))
