"""
Общие фикстуры: игрушечная система, сдвиг, механическая система, некоммутирующая пара полей
"""

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))

from controls import toy_control
from mayer import MayerProblem
from sysmodel import CostFunction, load_system, parse_system

DATA_DIR = Path(__file__).parent.parent / "data"

TOY_SOURCE = """
# x' = x v + x u'
n=1;m=1;l=1
f = x1*v1
g1 = x1
U = box(-1, 1)
V = set{0, 1}
"""

TRANSLATION_SOURCE = """
n=2;m=2;l=0
f = (0, 0)
g1 = (1, 0)
g2 = (0, 1)
U = box((-1, -1), (1, 1))
"""

NON_COMMUTING_SOURCE = """
n=2;m=2;l=0
f = (0, 0)
g1 = (1, 0)
g2 = (0, x1)
U = box((-1, -1), (1, 1))
"""


@pytest.fixture
def toy_system():
    return parse_system(TOY_SOURCE)


@pytest.fixture
def translation_system():
    return parse_system(TRANSLATION_SOURCE)


@pytest.fixture
def mechanical_system():
    """Осциллятор: сдвиг положения и удар по скорости, поля коммутируют"""
    return load_system(str(DATA_DIR / "mechanical_system.dsl"))


@pytest.fixture
def non_commuting_system():
    return parse_system(NON_COMMUTING_SOURCE)


@pytest.fixture
def toy_signal():
    return toy_control(12)


@pytest.fixture
def toy_problem(toy_system):
    """psi = x^2, x_bar = 1, u_bar = 1: V_AC = V_L1 = e^{-4}"""
    return MayerProblem(toy_system, CostFunction("x1^2", 1, 1), np.array([1.0]), np.array([1.0]))


@pytest.fixture
def out_dir(tmp_path):
    return str(tmp_path / "out")
