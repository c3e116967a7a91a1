#!/usr/bin/env python3
"""
Тесты p.d. решений: игрушечный пример в замкнутой форме, AC аппроксимации,
исследование предела и липшицева зависимость от данных
"""

import logging
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))

from controls import VPiece, piecewise_affine, piecewise_constant, step_control, toy_control
from errors import HorizonError, NotAbsolutelyContinuousError
from flowbox import FlowBoxChart
from solver import (
    ac_approximation,
    is_monotone_decreasing,
    jump_map,
    lipschitz_dependence_probe,
    loglog_slope,
    make_grid,
    pd_limit_study,
    pd_solution,
    pd_solution_by_jumps,
    solve_original_ac,
    solve_reduced,
    toy_closed_form,
)
from sysmodel import BoxSet, parse_system

logger = logging.getLogger(__name__)

X_BAR = 1.7

# Начальная точка и обычное управление для сквозной проверки AC управлений
AC_CASES = {
    "toy_system": ([X_BAR], (VPiece(0.0, 0.5, (1.0,)), VPiece(0.5, 1.0, (0.0,)))),
    "translation_system": ([0.2, -0.4], ()),
    "mechanical_system": ([0.5, -0.2], (VPiece(0.0, 1.0, (0.3,)),)),
}


@pytest.fixture
def chart(toy_system):
    return FlowBoxChart(toy_system, ode_tol=1e-10, jac_mode="variational")


def test_make_grid_contains_breakpoints(toy_signal):
    grid = make_grid(toy_signal, 11, extra=[0.123])
    for t in toy_signal.breakpoints + [0.123]:
        assert np.min(np.abs(grid - t)) == 0.0
    assert np.all(np.diff(grid) > 0)


def test_toy_closed_form_reproduced(chart, toy_signal):
    """Игрушечный пример: x(t) по формуле x_bar exp(int v + u(t) - u(0)) в 50 точках"""
    moments = np.linspace(0.0, 1.0, 50)
    grid = make_grid(toy_signal, 101, extra=moments)
    traj = pd_solution(chart, [X_BAR], toy_signal, grid)
    for t in moments:
        expected = toy_closed_form(toy_signal, X_BAR, t)
        assert traj.at(t)[0] == pytest.approx(expected, rel=1e-6)
    assert traj.final[0] == pytest.approx(X_BAR * np.exp(-0.5), rel=1e-6)
    logger.info(f"✅ x(1) = {traj.final[0]:.10f}")


def test_toy_regimes(chart, toy_signal):
    """x = x_bar e^t до 1/2, затем x_bar e^{1/2} e^{-2} и x_bar e^{1/2} попеременно"""
    traj = pd_solution(chart, [X_BAR], toy_signal, make_grid(toy_signal, 201))
    assert traj.at(0.25)[0] == pytest.approx(X_BAR * np.exp(0.25), rel=1e-6)
    low = X_BAR * np.exp(0.5) * np.exp(-2.0)
    high = X_BAR * np.exp(0.5)
    assert traj.at(0.5)[0] == pytest.approx(low, rel=1e-6)
    assert traj.at(0.5, side="L")[0] == pytest.approx(high, rel=1e-6)
    assert traj.at(0.7)[0] == pytest.approx(high, rel=1e-6)


def test_discontinuities_follow_u(chart, toy_signal):
    """x разрывна ровно там, где разрывна u"""
    traj = pd_solution(chart, [X_BAR], toy_signal, make_grid(toy_signal, 51))
    assert traj.jump_times == toy_signal.jump_times
    for i, t in enumerate(traj.times):
        gap = abs(traj.states[i, 0] - traj.states_left[i, 0])
        if t in toy_signal.jump_times:
            assert gap > 1e-3
        else:
            assert gap == 0.0


def test_pd_without_chart_agrees(chart, toy_signal):
    """Интегрирование по кускам со скачками дает то же решение"""
    grid = make_grid(toy_signal, 101)
    via_chart = pd_solution(chart, [X_BAR], toy_signal, grid)
    via_jumps = pd_solution_by_jumps(chart.system, [X_BAR], toy_signal, grid, 1e-10)
    assert via_chart.sup_distance(via_jumps) < 1e-7


def test_jump_map_toy(toy_system):
    """Скачок u: -1 -> 1 умножает x на e^2"""
    assert jump_map(toy_system, [1.0], [-1.0], [1.0], 1e-11) == pytest.approx([np.exp(2.0)], rel=1e-8)
    assert jump_map(toy_system, [0.4], [0.3], [0.3]) == pytest.approx([0.4])


def test_solve_reduced_toy(chart, toy_signal):
    """xi(t) = xi_bar e^{min(t, 1/2)} и непрерывна в скачках u"""
    xi_bar = X_BAR * np.exp(-1.0)
    traj = solve_reduced(chart, [xi_bar], toy_signal, make_grid(toy_signal, 41))
    for t in (0.2, 0.5, 0.9):
        assert traj.at(t)[0] == pytest.approx(xi_bar * np.exp(min(t, 0.5)), rel=1e-7)
    assert np.array_equal(traj.states, traj.states_left)


def test_zeta_equals_u(chart, toy_signal):
    """zeta(t) = u(t) точно в узлах сетки"""
    grid = make_grid(toy_signal, 31)
    traj = pd_solution(chart, [X_BAR], toy_signal, grid)
    for i, t in enumerate(grid):
        assert np.array_equal(traj.controls[i], toy_signal.u(t))


def test_original_ac_affine():
    """u(t) = t, g = 1, f = 0: x(t) = x_bar + t"""
    system = parse_system("n=1;m=1\nf = 0\ng1 = 1\nU = box(-2, 2)\n")
    ramp = piecewise_affine([0.0, 1.0], [[0.0], [1.0]])
    grid = make_grid(ramp, 11)
    traj = solve_original_ac(system, [0.5], ramp, grid, ode_tol=1e-10)
    assert traj.states[:, 0] == pytest.approx(0.5 + grid, abs=1e-9)
    with pytest.raises(NotAbsolutelyContinuousError):
        solve_original_ac(system, [0.5], step_control(0.5, [0.0], [1.0]), grid)


@pytest.mark.parametrize("name", sorted(AC_CASES))
def test_pd_matches_direct_for_ac_controls(request, name):
    """20 случайных AC управлений: p.d. решение совпадает с прямым интегрированием и сопряжено картой phi"""
    system = request.getfixturevalue(name)
    x_bar, v = AC_CASES[name]
    chart = FlowBoxChart(system, ode_tol=1e-10, jac_mode="variational")
    rng = np.random.default_rng(7)
    for _ in range(20):
        nodes = system.U.sample(rng, 5)
        control = piecewise_affine(np.linspace(0.0, 1.0, 5).tolist(), list(nodes), v)
        grid = make_grid(control, 41)
        pd = pd_solution(chart, x_bar, control, grid)
        direct = solve_original_ac(system, x_bar, control, grid, ode_tol=1e-10)
        assert pd.sup_distance(direct) < 1e-6
        for i in range(0, grid.size, 2):
            xi = chart.phi_pr(direct.states[i], direct.controls[i])
            assert xi == pytest.approx(pd.reduced[i], abs=1e-7)


def test_ac_approximation_single_step(toy_system):
    """Рампа ширины w_k справа от скачка, ||u_k - u||_1 = w_k / 2"""
    step = step_control(0.5, [0.0], [1.0])
    approx = ac_approximation(step, 1.0, 2, toy_system.U)
    w = 1.0 / 16.0
    assert approx.is_ac
    assert approx.u(0.5) == pytest.approx([0.0])
    assert approx.u(0.5 + w) == pytest.approx([1.0])
    assert approx.u(1.0) == pytest.approx([1.0])
    assert approx.l1_distance(step) == pytest.approx(w / 2)
    assert ac_approximation(approx, 1.0, 3) is approx
    with pytest.raises(HorizonError):
        ac_approximation(step, 1.5, 1)


def test_ac_approximation_keeps_t_star(toy_signal):
    """u_k(a) = u(a), u_k(t_star) = u(t_star), включая t_star в точке скачка"""
    for t_star in (0.5, 0.8, 1.0):
        approx = ac_approximation(toy_signal, t_star, 2)
        assert approx.u(0.0) == pytest.approx(toy_signal.u(0.0))
        assert approx.u(t_star) == pytest.approx(toy_signal.u(t_star))
        assert approx.l1_distance(toy_signal) <= 2 * 12 * (1.0 / (16 * 12)) + 1e-12


def test_pd_independent_of_ramp_width(toy_system, chart):
    """В точке непрерывности u две рампы разной ширины дают одно x(t_star), равное p.d. решению"""
    step = step_control(0.5, [1.0], [-1.0], v_pieces=(VPiece(0.0, 1.0, (1.0,)),))
    t_star = 0.8
    x_pd = pd_solution(chart, [X_BAR], step, make_grid(step, 41, extra=[t_star])).at(t_star)
    ends = []
    for k in (2, 5):
        approx = ac_approximation(step, t_star, k, toy_system.U)
        grid = make_grid(approx, 41, extra=[t_star])
        ends.append(solve_original_ac(toy_system, [X_BAR], approx, grid, ode_tol=1e-10).at(t_star))
    assert ends[0] == pytest.approx(ends[1], rel=1e-7)
    assert ends[1] == pytest.approx(x_pd, rel=1e-7)
    assert x_pd[0] == pytest.approx(X_BAR * np.exp(0.8 - 2.0), rel=1e-7)


def test_pd_limit_step(chart):
    """Ступенька: ошибки монотонно убывают, наклон log-log около 1"""
    step = step_control(0.5, [0.0], [1.0], v_pieces=(VPiece(0.0, 1.0, (1.0,)),))
    report = pd_limit_study(chart, [1.0], step, 1.0, range(2, 9), n_points=101)
    assert report.passed
    assert report.slope is not None and report.slope >= 0.9
    assert report.column("x_l1")[-1] <= 1e-4
    logger.info(f"📊 наклон {report.slope:.3f}")


def test_pd_limit_toy_terminal(chart):
    """Игрушечный u (усечен на 4 кусках): |x_k(1) - x_bar e^{-1/2}| -> 0"""
    signal = toy_control(4)
    report = pd_limit_study(chart, [1.0], signal, 1.0, range(2, 7), n_points=101)
    assert report.monotone["x_tstar"]
    assert report.column("x_tstar")[-1] <= 1e-4


def test_pd_limit_ac_input_is_exact(chart):
    """Для AC входа u_k = u и отклонения на уровне допуска интегратора"""
    ramp = piecewise_affine([0.0, 1.0], [[0.0], [0.5]], (VPiece(0.0, 1.0, (1.0,)),))
    report = pd_limit_study(chart, [1.0], ramp, 0.5, [1, 2], n_points=41)
    assert max(report.column("x_l1")) <= 1e-8
    assert report.details["ac_input"] is True


def test_monotone_helpers():
    assert is_monotone_decreasing([1.0, 0.5, 0.52, 0.1])
    assert not is_monotone_decreasing([1.0, 0.5, 0.8])
    assert loglog_slope([1e-1, 1e-2, 1e-3], [2e-1, 2e-2, 2e-3]) == pytest.approx(1.0)
    assert loglog_slope([1.0], [1.0]) is None


def test_lipschitz_translation(translation_system):
    """Сдвиг: отношение ограничено (разности решений равны разностям данных)"""
    chart = FlowBoxChart(translation_system)
    box = BoxSet.from_bounds([-1.0, -1.0], [1.0, 1.0])
    report = lipschitz_dependence_probe(chart, 1.0, box, 10, seed=3)
    assert report.pairs_used == 10
    assert 0.0 < report.constant <= 2.0 + 1e-9


def test_lipschitz_identical_pairs_skipped(chart):
    same = piecewise_constant([0.0, 1.0], [[0.0]], v_pieces=(VPiece(0.0, 1.0, (0.0,)),))
    report = lipschitz_dependence_probe(chart, 1.0, BoxSet.from_bounds([-1.0], [1.0]), 0,
                                        pairs=[(([1.0], same), ([1.0], same))])
    assert report.skipped == 1 and report.pairs_used == 0
    with pytest.raises(ValueError):
        lipschitz_dependence_probe(chart, 1.0, BoxSet.from_bounds([-1.0], [1.0]), 5)


def test_lipschitz_toy_stable(chart):
    """Удвоение числа пар меняет оценку меньше чем на 50%"""
    box = BoxSet.from_bounds([-1.0], [1.0])
    v = (VPiece(0.0, 0.5, (1.0,)), VPiece(0.5, 1.0, (0.0,)))
    small = lipschitz_dependence_probe(chart, 1.0, box, 20, v_pieces=v, seed=1, method="jumps")
    large = lipschitz_dependence_probe(chart, 1.0, box, 40, v_pieces=v, seed=1, method="jumps")
    assert np.isfinite(small.constant) and np.isfinite(large.constant)
    assert abs(large.constant - small.constant) <= 0.5 * small.constant


def test_lipschitz_threads_and_prefix(chart):
    """Пары не зависят от числа потоков; первые пары совпадают при росте выборки"""
    box = BoxSet.from_bounds([-1.0], [1.0])
    v = (VPiece(0.0, 0.5, (1.0,)), VPiece(0.5, 1.0, (0.0,)))
    serial = lipschitz_dependence_probe(chart, 1.0, box, 20, v_pieces=v, seed=4,
                                        method="jumps", threads=1)
    pooled = lipschitz_dependence_probe(chart, 1.0, box, 20, v_pieces=v, seed=4,
                                        method="jumps", threads=3)
    longer = lipschitz_dependence_probe(chart, 1.0, box, 40, v_pieces=v, seed=4,
                                        method="jumps", threads=3)
    assert serial.ratios == pytest.approx(pooled.ratios, abs=0.0)
    assert longer.ratios[:len(serial.ratios)] == pytest.approx(serial.ratios, abs=0.0)
