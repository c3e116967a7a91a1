#!/usr/bin/env python3
"""
Тесты карты flow-box: phi, обратная карта, производные и push-forward полей
"""

import logging
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))

from errors import FlowEscapeError
from flowbox import FlowBoxChart, escape_box_for, estimate_dphi_bound, exp_flow
from sysmodel import BoxSet, sample_box

logger = logging.getLogger(__name__)

COMMUTING_SYSTEMS = ("toy_system", "translation_system", "mechanical_system")


def test_exp_flow_linear():
    """exp(t * A)(p) для линейного поля"""
    end = exp_flow(lambda q: -q, 1.0, [2.0], ode_tol=1e-12)
    assert end == pytest.approx([2.0 * np.exp(-1.0)], rel=1e-9)
    assert exp_flow(lambda q: q, 0.0, [1.5]) == pytest.approx([1.5])


def test_exp_flow_escape():
    """Взрывающееся решение останавливается на границе бокса"""
    box = BoxSet.from_bounds([-1.0], [1.0])
    with pytest.raises(FlowEscapeError):
        exp_flow(lambda q: q ** 2, 2.0, [0.9], ode_tol=1e-8, escape_box=escape_box_for(box))


def test_escape_box_is_enlarged():
    box = BoxSet.from_bounds([0.0, 0.0], [1.0, 2.0])
    lo, hi = escape_box_for(box).bounds()
    assert np.all(hi - lo >= 20.0)
    assert escape_box_for(None) is None


@pytest.mark.parametrize("jac_mode", ["finite-difference", "variational"])
def test_phi_toy_closed_form(toy_system, jac_mode):
    """Для игрушечной системы phi(x, z) = (x e^{-z}, z)"""
    chart = FlowBoxChart(toy_system, jac_mode=jac_mode)
    for x, z in [(1.0, 0.0), (2.0, 0.5), (-0.7, -1.0)]:
        xi, zeta = chart.phi([x], [z])
        assert xi == pytest.approx([x * np.exp(-z)], rel=1e-8)
        assert zeta == pytest.approx([z])


def test_phi_inverse(toy_system, translation_system):
    """phi^{-1}(phi(p)) = p"""
    chart = FlowBoxChart(toy_system)
    xi, zeta = chart.phi([1.3], [0.4])
    x, z = chart.phi_inverse(xi, zeta)
    assert x == pytest.approx([1.3], rel=1e-8)
    assert z == pytest.approx([0.4])

    shift = FlowBoxChart(translation_system)
    assert shift.phi_pr([1.0, 2.0], [0.5, -0.5]) == pytest.approx([0.5, 2.5], abs=1e-9)


@pytest.mark.parametrize("jac_mode", ["finite-difference", "variational"])
def test_jacobian_toy(toy_system, jac_mode):
    """D phi = [[e^{-z}, -x e^{-z}], [0, 1]]"""
    chart = FlowBoxChart(toy_system, jac_mode=jac_mode)
    x, z = 1.5, 0.3
    expected = np.array([[np.exp(-z), -x * np.exp(-z)], [0.0, 1.0]])
    assert chart.jacobian([x], [z]) == pytest.approx(expected, abs=1e-5)


def test_pushforward_drift_toy(toy_system):
    """F(xi, zeta, v) = xi * v"""
    chart = FlowBoxChart(toy_system)
    for xi, zeta, v in [(1.0, 0.0, 1.0), (2.0, 0.7, 1.0), (2.0, 0.7, 0.0)]:
        assert chart.pushforward_drift([xi], [zeta], [v]) == pytest.approx([xi * v], abs=1e-5)


def test_pushforward_impulse_is_unit(toy_system, translation_system):
    """D phi . g_a = e_(n+a) для коммутирующих полей"""
    chart = FlowBoxChart(toy_system)
    assert chart.pushforward_impulse([1.2], [0.3], 0, strict=True) == pytest.approx([0.0, 1.0], abs=1e-5)
    assert chart.flowbox_deviation([1.2], [0.3]) < 1e-5

    shift = FlowBoxChart(translation_system, jac_mode="variational")
    assert shift.flowbox_deviation([0.1, 0.2], [0.3, 0.4]) < 1e-8


def test_non_commuting_deviation_is_visible(non_commuting_system):
    """Без коммутативности D phi . g_a заметно отличается от e_(n+a)"""
    chart = FlowBoxChart(non_commuting_system, jac_mode="variational")
    assert chart.flowbox_deviation([0.5, 0.5], [0.5, 0.5]) > 1e-2


def test_chart_options(toy_system):
    """analytic сводится к variational; неизвестный режим и чужой бокс отвергаются"""
    assert FlowBoxChart(toy_system, jac_mode="analytic").jac_mode == "variational"
    with pytest.raises(ValueError):
        FlowBoxChart(toy_system, jac_mode="spectral")
    with pytest.raises(ValueError):
        FlowBoxChart(toy_system, box=BoxSet.from_bounds([0.0], [1.0]))
    assert FlowBoxChart(toy_system).with_tolerance(1e-6).ode_tol == 1e-6


def test_estimate_dphi_bound(toy_system):
    """sup |D phi| на [-1, 1]^2 не меньше e (угол z = -1, |x| = 1)"""
    chart = FlowBoxChart(toy_system, jac_mode="variational")
    box = BoxSet.from_bounds([-1.0, -1.0], [1.0, 1.0])
    bound = estimate_dphi_bound(chart, box, n_samples=32)
    assert 1.0 < bound < 10.0
    logger.info(f"📊 sup |D phi| ~ {bound:.4g}")


@pytest.mark.parametrize("name", COMMUTING_SYSTEMS)
def test_flowbox_on_sampled_points(request, name):
    """200 точек Халтона: |D phi . g_a - e_(n+a)| <= 1e-5 и |phi^{-1}(phi(p)) - p| <= 1e-6"""
    system = request.getfixturevalue(name)
    chart = FlowBoxChart(system, ode_tol=1e-10, jac_mode="variational")
    dim = system.n + system.m
    points = sample_box(BoxSet.from_bounds([-1.0] * dim, [1.0] * dim), 200, seed=0)

    worst_push, worst_trip = 0.0, 0.0
    for p in points:
        x, z = p[:system.n], p[system.n:]
        worst_push = max(worst_push, chart.flowbox_deviation(x, z))
        back_x, back_z = chart.phi_inverse(*chart.phi(x, z))
        worst_trip = max(worst_trip, float(np.linalg.norm(np.concatenate([back_x, back_z]) - p)))

    logger.info(f"📊 {name}: push-forward {worst_push:.2e}, обратная карта {worst_trip:.2e}")
    assert worst_push <= 1e-5
    assert worst_trip <= 1e-6


def test_mechanical_phi_closed_form(mechanical_system):
    """g1 = (1, 0) сдвигает только x1: phi_pr(x, (z1, 0)) = (x1 - z1, x2)"""
    chart = FlowBoxChart(mechanical_system, ode_tol=1e-11)
    assert chart.phi_pr([0.4, -0.3], [0.25, 0.0]) == pytest.approx([0.15, -0.3], abs=1e-9)
    # удар по скорости не трогает положение
    xi = chart.phi_pr([0.4, -0.3], [0.0, 0.5])
    assert xi[0] == pytest.approx(0.4, abs=1e-9)
    assert xi[1] < -0.3
