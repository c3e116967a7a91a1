"""
Задача Майера psi(x(b), u(b)) -> min по классам управлений

Классы:
    L1       - кусочно-постоянные u (скачки разрешены, p.d. решения)
    AC       - непрерывные кусочно-аффинные u с u(a) = u_bar
    AC_K     - AC с Var[u] <= K
    U_K      - space-time управления с u0' + |u'| <= b - a + K (мосты разрешены)
    U_K_plus - то же с u0' > 0 на каждом сегменте

Оценка инфимума - многостартовый координатный поиск без производных,
детерминированный при фиксированном seed.
"""
import logging
import os
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import orjson
from pydantic import BaseModel, ConfigDict, Field, field_validator
from scipy.spatial import cKDTree
from scipy.spatial.distance import directed_hausdorff

from config import config
from controls import ControlSignal, VPiece, piecewise_affine, piecewise_constant, signal_to_model
from errors import ControlValidationError, EmptyCloudError, InputFormatError, SearchFailedError
from flowbox import FlowBoxChart
from runner import purpose_rng, run_parallel, safe_call
from solver import jump_map, make_grid, pd_solution, pd_solution_by_jumps
from spacetime import SpaceTimeControl, dump_spacetime, solve_spacetime
from sysmodel import BoxSet, ControlAffineSystem, CostFunction, FiniteSet, load_system

logger = logging.getLogger(__name__)

CLASSES = ("AC", "L1", "AC_K", "U_K", "U_K_plus")
BUDGETED_CLASSES = ("AC_K", "U_K", "U_K_plus")
DEFAULT_PIECES = {"AC": 8, "L1": 8, "AC_K": 8, "U_K": 16, "U_K_plus": 16}

MIN_BUDGET = 100
RESTART_FRACTION = 0.2
INITIAL_STEP = 0.25
MIN_STEP = 1e-6
PLUS_MIN_WEIGHT = 1e-3      # нижняя граница веса времени на сегменте в U_K_plus


# ---------------------------------------------------------------------------
# Задача
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class MayerProblem:
    system: ControlAffineSystem
    psi: CostFunction
    x_bar: np.ndarray
    u_bar: np.ndarray
    a: float = 0.0
    b: float = 1.0

    def __post_init__(self):
        x_bar = np.atleast_1d(np.asarray(self.x_bar, dtype=float))
        u_bar = np.atleast_1d(np.asarray(self.u_bar, dtype=float))
        object.__setattr__(self, "x_bar", x_bar)
        object.__setattr__(self, "u_bar", u_bar)
        if x_bar.size != self.system.n or u_bar.size != self.system.m:
            raise ControlValidationError(
                f"x_bar/u_bar размерности {x_bar.size}/{u_bar.size} вместо n={self.system.n}, m={self.system.m}"
            )
        if not self.system.U.contains(u_bar, 1e-9):
            raise ControlValidationError(f"u_bar = {u_bar.tolist()} вне U")
        if not np.isfinite(self.psi(x_bar, u_bar)):
            raise ControlValidationError("psi не конечна в (x_bar, u_bar)")

    @cached_property
    def chart(self) -> FlowBoxChart:
        return FlowBoxChart(self.system)

    def cost(self, terminal: np.ndarray) -> float:
        n = self.system.n
        return self.psi(terminal[:n], terminal[n:])


# ---------------------------------------------------------------------------
# Параметризации классов
# ---------------------------------------------------------------------------

def _unit_to_u(U, theta: np.ndarray) -> np.ndarray:
    if isinstance(U, BoxSet):
        return U.from_unit(theta)
    lo, hi = U.bounds()
    point = lo + (hi - lo) * np.clip(theta, 0.0, 1.0)
    if not U.contains(point, 1e-9):
        raise ControlValidationError(f"Точка {point.tolist()} вне U")
    return point


def _shrink_to_budget(nodes: np.ndarray, K: float) -> np.ndarray:
    """Сжимает приращения к nodes[0], чтобы вариация была <= K (выпуклость U сохраняет допустимость)"""
    var = float(np.sum(np.linalg.norm(np.diff(nodes, axis=0), axis=1)))
    if var <= K:
        return nodes
    c = K / var
    return nodes[0] + c * (nodes - nodes[0])


@dataclass(frozen=True)
class ControlParameterization:
    """
    Конечномерное пространство поиска класса: theta из [0, 1]^dim -> управление.

    Раскладка theta:
        L1:          P+1 значений u (последнее - u(b)), P значений v
        AC, AC_K:    P узлов u (узел 0 - u_bar), P значений v
        U_K(_plus):  P весов времени, P узлов u, P значений v
    """
    cls: str
    system: ControlAffineSystem
    u_bar: Tuple[float, ...]
    a: float = 0.0
    b: float = 1.0
    K: Optional[float] = None
    pieces: Optional[int] = None

    def __post_init__(self):
        if self.cls not in CLASSES:
            raise ValueError(f"Неизвестный класс {self.cls}, ожидается один из {CLASSES}")
        if self.cls in BUDGETED_CLASSES:
            if self.K is None or self.K < 0:
                raise ValueError(f"Класс {self.cls} требует K >= 0")
        object.__setattr__(self, "u_bar", tuple(float(v) for v in np.atleast_1d(self.u_bar)))
        if self.pieces is None:
            object.__setattr__(self, "pieces", DEFAULT_PIECES[self.cls])
        if self.pieces < 1:
            raise ValueError("pieces должно быть >= 1")

    @classmethod
    def for_problem(cls, problem: MayerProblem, control_class: str, K: Optional[float] = None,
                    pieces: Optional[int] = None) -> 'ControlParameterization':
        return cls(control_class, problem.system, tuple(problem.u_bar), problem.a, problem.b, K, pieces)

    # --- размеры блоков ---

    @property
    def m(self) -> int:
        return self.system.m

    @property
    def v_width(self) -> int:
        V = self.system.V
        if self.system.l == 0 or V is None:
            return 0
        return 1 if isinstance(V, FiniteSet) else self.system.l

    @property
    def is_spacetime(self) -> bool:
        return self.cls in ("U_K", "U_K_plus")

    @property
    def u_count(self) -> int:
        return self.pieces + 1 if self.cls == "L1" else self.pieces

    @property
    def dim(self) -> int:
        time_weights = self.pieces if self.is_spacetime else 0
        return time_weights + self.u_count * self.m + self.pieces * self.v_width

    def initial(self) -> np.ndarray:
        return np.full(self.dim, 0.5)

    # --- декодирование ---

    def _split(self, theta: np.ndarray):
        theta = np.clip(np.asarray(theta, dtype=float), 0.0, 1.0)
        if theta.size != self.dim:
            raise ValueError(f"theta размерности {theta.size} вместо {self.dim}")
        pos = 0
        weights = None
        if self.is_spacetime:
            weights = theta[:self.pieces]
            pos = self.pieces
        u_block = theta[pos:pos + self.u_count * self.m].reshape(self.u_count, self.m)
        pos += self.u_count * self.m
        v_block = theta[pos:].reshape(self.pieces, self.v_width)
        return weights, u_block, v_block

    def _v_values(self, v_block: np.ndarray) -> np.ndarray:
        if self.v_width == 0:
            return np.zeros((self.pieces, 0))
        return np.array([self.system.V.from_unit(row) for row in v_block])

    def decode(self, theta) -> Union[ControlSignal, SpaceTimeControl]:
        weights, u_block, v_block = self._split(theta)
        values = np.array([_unit_to_u(self.system.U, row) for row in u_block])
        v_values = self._v_values(v_block)
        u_bar = np.array(self.u_bar)

        if self.is_spacetime:
            return self._decode_spacetime(weights, values, v_values, u_bar)

        times = np.linspace(self.a, self.b, self.pieces + 1)
        v_pieces = tuple(VPiece(float(t0), float(t1), tuple(v))
                         for t0, t1, v in zip(times, times[1:], v_values)) if self.v_width else ()
        if self.cls == "L1":
            return piecewise_constant(times.tolist(), list(values[:-1]), u_end=values[-1], v_pieces=v_pieces)

        nodes = np.vstack([u_bar, values])
        if self.cls == "AC_K":
            nodes = _shrink_to_budget(nodes, self.K)
        return piecewise_affine(times.tolist(), list(nodes), v_pieces)

    def _decode_spacetime(self, weights, values, v_values, u_bar) -> SpaceTimeControl:
        if self.cls == "U_K_plus":
            weights = PLUS_MIN_WEIGHT + (1.0 - PLUS_MIN_WEIGHT) * weights
        if not np.any(weights > 0):
            weights = np.ones_like(weights)
        du0 = (self.b - self.a) * weights / weights.sum()

        nodes = _shrink_to_budget(np.vstack([u_bar, values]), self.K)
        du = np.diff(nodes, axis=0)
        raw = du0 + np.linalg.norm(du, axis=1)
        keep = raw > 0
        du0, du, raw, v_values = du0[keep], du[keep], raw[keep], v_values[keep]

        s_nodes = np.concatenate([[0.0], np.cumsum(raw) / raw.sum()])
        s_nodes[-1] = 1.0
        u0 = self.a + np.concatenate([[0.0], np.cumsum(du0)])
        u = u_bar + np.vstack([np.zeros(self.m), np.cumsum(du, axis=0)])
        return SpaceTimeControl(s_nodes, u0, u, v_values, float(self.K))


# ---------------------------------------------------------------------------
# Симуляция кандидата
# ---------------------------------------------------------------------------

def simulate_terminal(problem: MayerProblem, control: Union[ControlSignal, SpaceTimeControl],
                      ode_tol: Optional[float] = None, method: str = "jumps") -> np.ndarray:
    """
    Терминальная точка (x(b), u(b)) или (y(1), u(1)).
    Для управлений с u(a) != u_bar начальный скачок u_bar -> u(a) применяется к x_bar.
    """
    tol = config.search_ode_tol if ode_tol is None else ode_tol
    system = problem.system
    if isinstance(control, SpaceTimeControl):
        return solve_spacetime(system, problem.x_bar, control, None, tol).terminal

    x0 = jump_map(system, problem.x_bar, problem.u_bar, control.u(control.a), tol)
    grid = make_grid(control, 2)
    if method == "chart":
        traj = pd_solution(problem.chart.with_tolerance(tol), x0, control, grid)
    else:
        traj = pd_solution_by_jumps(system, x0, control, grid, tol)
    return np.concatenate([traj.final, control.u(control.b)])


# ---------------------------------------------------------------------------
# Поиск
# ---------------------------------------------------------------------------

@dataclass
class SearchResult:
    theta: np.ndarray
    value: float
    evals: int
    failures: int
    trace: List[Dict[str, float]] = field(default_factory=list)
    starts_refined: int = 0


class _Budgeted:
    """Счетчик вычислений целевой функции, отказ кандидата = +inf"""

    def __init__(self, objective: Callable[[np.ndarray], float], budget: int, threads: int):
        self.objective = objective
        self.budget = budget
        self.threads = threads
        self.evals = 0
        self.failures = 0
        self.best_value = np.inf
        self.best_theta: Optional[np.ndarray] = None
        self.trace: List[Dict[str, float]] = []

    @property
    def remaining(self) -> int:
        return self.budget - self.evals

    def _one(self, theta: np.ndarray) -> float:
        value, error = safe_call(self.objective, theta)
        if error is not None:
            logger.debug(f"Кандидат отброшен: {error}")
            return np.inf
        return float(value) if np.isfinite(value) else np.inf

    def batch(self, thetas: Sequence[np.ndarray]) -> List[float]:
        thetas = list(thetas)[:max(self.remaining, 0)]
        values = run_parallel(self._one, thetas, self.threads)
        for theta, value in zip(thetas, values):
            self.evals += 1
            if not np.isfinite(value):
                self.failures += 1
            elif value < self.best_value:
                self.best_value = value
                self.best_theta = theta.copy()
                self.trace.append({"evals": float(self.evals), "value": value})
        return values


def pattern_search(objective: Callable[[np.ndarray], float], dim: int, budget: int,
                   rng: np.random.Generator, x_init: Optional[np.ndarray] = None,
                   threads: Optional[int] = None) -> SearchResult:
    """
    Многостартовый координатный поиск на [0, 1]^dim.
    20% бюджета уходит на старты (первый - x_init), затем из лучших стартов
    опрос +-step по координатам; нет улучшения - step *= 0.5, стоп при step < 1e-6.
    Опрос идет пачкой и ход выбирается по минимуму, так что результат не зависит от числа потоков.
    """
    threads = config.threads if threads is None else threads
    counter = _Budgeted(objective, budget, threads)
    x_init = np.full(dim, 0.5) if x_init is None else np.asarray(x_init, dtype=float)

    n_starts = max(1, int(RESTART_FRACTION * budget))
    starts = [x_init] + [rng.random(dim) for _ in range(n_starts - 1)]
    start_values = counter.batch(starts)
    order = np.argsort(np.asarray(start_values), kind="stable")

    refined = 0
    for idx in order:
        if counter.remaining <= 0 or dim == 0:
            break
        if not np.isfinite(start_values[idx]):
            continue
        refined += 1
        x, fx = starts[idx].copy(), start_values[idx]
        step = INITIAL_STEP
        while step >= MIN_STEP and counter.remaining > 0:
            polls = []
            for i in range(dim):
                for sign in (1.0, -1.0):
                    trial = x.copy()
                    trial[i] = np.clip(trial[i] + sign * step, 0.0, 1.0)
                    if trial[i] != x[i]:
                        polls.append(trial)
            if not polls:
                step *= 0.5
                continue
            values = counter.batch(polls)
            best = int(np.argmin(values))
            if values[best] < fx:
                x, fx = polls[best], values[best]
            else:
                step *= 0.5
        logger.debug(f"Старт {refined}: {fx:.9g}, вычислений {counter.evals}/{budget}")

    if counter.best_theta is None:
        raise SearchFailedError(f"Все {counter.evals} кандидатов упали при симуляции")
    return SearchResult(counter.best_theta, counter.best_value, counter.evals, counter.failures,
                        counter.trace, refined)


# ---------------------------------------------------------------------------
# Оценка функции цены
# ---------------------------------------------------------------------------

@dataclass
class ValueReport:
    cls: str
    K: Optional[float]
    best_value: float
    best_control: Dict[str, Any]
    evals: int
    failures: int
    seed: int
    budget: int
    pieces: int
    trace: List[Dict[str, float]]
    search_value: float
    recheck_deviation: float
    starts_refined: int

    def to_dict(self) -> Dict[str, Any]:
        return {
            "class": self.cls,
            "K": self.K,
            "best_value": self.best_value,
            "best_control": self.best_control,
            "evals": self.evals,
            "failures": self.failures,
            "seed": self.seed,
            "budget": self.budget,
            "pieces": self.pieces,
            "search": {
                "value": self.search_value,
                "recheck_deviation": self.recheck_deviation,
                "starts_refined": self.starts_refined,
                "improvements": len(self.trace),
            },
        }


def _serialize_control(control: Union[ControlSignal, SpaceTimeControl]) -> Dict[str, Any]:
    if isinstance(control, SpaceTimeControl):
        return dump_spacetime(control)
    return signal_to_model(control).model_dump(exclude_none=True)


def estimate_value(problem: MayerProblem, param: ControlParameterization, budget: int,
                   seed: Optional[int] = None, ode_tol: Optional[float] = None,
                   threads: Optional[int] = None) -> ValueReport:
    """
    Оценка инфимума psi по классу param.cls; лучший кандидат пересимулируется,
    best_value берется из пересчета.
    """
    if budget < MIN_BUDGET:
        raise ValueError(f"budget должен быть >= {MIN_BUDGET}")
    seed = config.seed if seed is None else seed
    tol = config.search_ode_tol if ode_tol is None else ode_tol

    def objective(theta: np.ndarray) -> float:
        return problem.cost(simulate_terminal(problem, param.decode(theta), tol))

    logger.info(f"🚀 Оценка V_{param.cls}" + (f" (K={param.K:g})" if param.K is not None else "")
                + f": {param.dim} параметров, бюджет {budget}")
    rng = purpose_rng(seed, f"restarts:{param.cls}")
    result = pattern_search(objective, param.dim, budget, rng, param.initial(), threads)

    best_control = param.decode(result.theta)
    recheck = problem.cost(simulate_terminal(problem, best_control, tol))
    deviation = abs(recheck - result.value)
    if deviation > 10 * tol * (1 + abs(recheck)):
        logger.warning(f"⚠️ Пересчет лучшего управления отличается на {deviation:.3e}")

    report = ValueReport(
        cls=param.cls, K=param.K, best_value=recheck,
        best_control=_serialize_control(best_control),
        evals=result.evals, failures=result.failures, seed=seed, budget=budget,
        pieces=param.pieces, trace=result.trace, search_value=result.value,
        recheck_deviation=deviation, starts_refined=result.starts_refined,
    )
    logger.info(f"✅ V_{param.cls} ~ {report.best_value:.9g} ({report.evals} вычислений, "
                f"отказов {report.failures})")
    return report


# ---------------------------------------------------------------------------
# Собственное расширение и предел K -> inf
# ---------------------------------------------------------------------------

@dataclass
class ExtensionReport:
    values: Dict[str, float]
    bv_values: List[Tuple[float, float]]
    checks: Dict[str, bool]
    tol_value: float
    reports: List[ValueReport] = field(default_factory=list)
    notes: List[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def table(self) -> List[Dict[str, Any]]:
        rows = [{"class": cls, "K": "", "value": value} for cls, value in self.values.items()]
        rows += [{"class": "U_K", "K": K, "value": value} for K, value in self.bv_values]
        return rows

    def to_dict(self) -> Dict[str, Any]:
        return {
            "values": self.values,
            "bv_values": [{"K": K, "value": v} for K, v in self.bv_values],
            "checks": self.checks,
            "passed": self.passed,
            "tol_value": self.tol_value,
            "notes": self.notes,
        }


def proper_extension_check(problem: MayerProblem, budget: int, K_list: Sequence[float],
                           seed: Optional[int] = None, tol_value: Optional[float] = None,
                           class_order: bool = False, threads: Optional[int] = None,
                           pieces: Optional[int] = None) -> ExtensionReport:
    """
    V_AC = V_L1 и V_{BV_K} -> V_L1 при K -> inf.
    class_order: дополнительно V_{AC_K} >= V_{BV_K+} >= V_{BV_K} >= V_L1 для каждого K.
    """
    if any(k2 <= k1 for k1, k2 in zip(K_list, K_list[1:])):
        raise ValueError("K_list должен строго возрастать")
    tol = config.tol_value if tol_value is None else tol_value

    def run(cls: str, K: Optional[float] = None) -> ValueReport:
        return estimate_value(problem, ControlParameterization.for_problem(problem, cls, K, pieces),
                              budget, seed, threads=threads)

    reports = [run("AC"), run("L1")]
    v_ac, v_l1 = reports[0].best_value, reports[1].best_value
    bv = []
    for K in K_list:
        rep = run("U_K", K)
        reports.append(rep)
        bv.append((float(K), rep.best_value))

    bv_vals = [v for _, v in bv]
    checks = {
        "ac_equals_l1": abs(v_ac - v_l1) <= tol,
        "bv_nonincreasing": all(b <= a + tol for a, b in zip(bv_vals, bv_vals[1:])),
        "bv_limit": bool(bv_vals) and abs(bv_vals[-1] - v_l1) <= tol,
    }
    notes = []
    if class_order:
        ordered = True
        for K, v_bv in bv:
            v_ack = run("AC_K", K)
            v_plus = run("U_K_plus", K)
            reports += [v_ack, v_plus]
            chain = [v_ack.best_value, v_plus.best_value, v_bv, v_l1]
            ok = all(hi >= lo - tol for hi, lo in zip(chain, chain[1:]))
            if not ok:
                notes.append(f"K={K:g}: порядок классов нарушен {chain}")
            ordered = ordered and ok
        checks["class_order"] = ordered

    for name, ok in checks.items():
        if not ok:
            notes.append(f"проверка {name} не пройдена")
    report = ExtensionReport({"AC": v_ac, "L1": v_l1}, bv, checks, tol, reports, notes)
    if report.passed:
        logger.info(f"✅ Собственное расширение: |V_AC - V_L1| = {abs(v_ac - v_l1):.3e}")
    else:
        logger.warning(f"⚠️ Собственное расширение: {'; '.join(notes)}")
    return report


# ---------------------------------------------------------------------------
# Облака достижимых точек
# ---------------------------------------------------------------------------

@dataclass
class ReachableCloud:
    cls: str
    K: Optional[float]
    points: np.ndarray          # (N, n + m)
    failures: int
    seed: int

    def __len__(self) -> int:
        return self.points.shape[0]


def sample_reachable(problem: MayerProblem, control_class: str, K: Optional[float], n_samples: int,
                     seed: Optional[int] = None, pieces: Optional[int] = None,
                     ode_tol: Optional[float] = None, threads: Optional[int] = None) -> ReachableCloud:
    """
    Терминальные точки n_samples случайных допустимых управлений класса.
    Первые N точек облака размера 2N совпадают с облаком размера N.
    """
    if n_samples < 1:
        raise ValueError("n_samples должен быть >= 1")
    seed = config.seed if seed is None else seed
    param = ControlParameterization.for_problem(problem, control_class, K, pieces)
    rng = purpose_rng(seed, f"cloud:{control_class}")
    thetas = rng.random((n_samples, param.dim))

    def terminal(theta):
        point, error = safe_call(lambda: simulate_terminal(problem, param.decode(theta), ode_tol))
        if error is not None:
            logger.debug(f"Точка облака пропущена: {error}")
        return point

    results = run_parallel(terminal, list(thetas), threads)
    points = [p for p in results if p is not None]
    failures = n_samples - len(points)
    if not points:
        raise EmptyCloudError(f"Облако {control_class} пусто: все {n_samples} симуляций упали")
    logger.info(f"📊 Облако {control_class}: {len(points)} точек, пропущено {failures}")
    return ReachableCloud(control_class, K, np.array(points), failures, seed)


def _cloud_array(cloud) -> np.ndarray:
    arr = cloud.points if isinstance(cloud, ReachableCloud) else np.asarray(cloud, dtype=float)
    arr = np.atleast_2d(arr)
    if arr.size == 0:
        raise EmptyCloudError("Пустое облако")
    return arr


def hausdorff_distance(cloud_a, cloud_b) -> Tuple[float, float]:
    """(d(A -> B), d(B -> A)), d(A -> B) = max_a min_b |a - b|"""
    a, b = _cloud_array(cloud_a), _cloud_array(cloud_b)
    return float(directed_hausdorff(a, b)[0]), float(directed_hausdorff(b, a)[0])


def cloud_spacing(cloud) -> float:
    """Среднее расстояние до ближайшего соседа"""
    arr = _cloud_array(cloud)
    if arr.shape[0] < 2:
        return 0.0
    distances, _ = cKDTree(arr).query(arr, k=2)
    return float(np.mean(distances[:, 1]))


def cloud_inclusion(inner, outer, eps: float) -> Dict[str, float]:
    """Лежит ли inner в eps-окрестности outer"""
    a, b = _cloud_array(inner), _cloud_array(outer)
    distances, _ = cKDTree(b).query(a, k=1)
    return {
        "max_distance": float(np.max(distances)),
        "fraction_inside": float(np.mean(distances <= eps)),
        "included": bool(np.all(distances <= eps)),
        "eps": float(eps),
    }


# ---------------------------------------------------------------------------
# Файл задачи
# ---------------------------------------------------------------------------

class ProblemFileModel(BaseModel):
    """JSON документ задачи Майера"""
    model_config = ConfigDict(populate_by_name=True)

    system: str
    psi: str
    x_bar: List[float]
    u_bar: List[float]
    horizon: Tuple[float, float] = (0.0, 1.0)
    control_class: str = Field(default="L1", alias="class")
    K: Optional[float] = Field(default=None, ge=0)
    K_list: List[float] = Field(default_factory=lambda: [0.5, 1.0, 2.0, 4.0])
    budget: int = Field(default=2000, ge=MIN_BUDGET)
    seed: int = 0
    pieces: Optional[int] = Field(default=None, ge=1)
    classes: List[str] = Field(default_factory=lambda: ["L1", "AC"])
    n_samples: int = Field(default=1000, ge=1)
    grid: Optional[Dict[str, Any]] = None

    @field_validator("control_class")
    @classmethod
    def _known_class(cls, value: str) -> str:
        if value not in CLASSES:
            raise ValueError(f"класс {value} не из {CLASSES}")
        return value

    @field_validator("classes")
    @classmethod
    def _known_classes(cls, values: List[str]) -> List[str]:
        unknown = [v for v in values if v not in CLASSES]
        if unknown:
            raise ValueError(f"неизвестные классы {unknown}")
        return values


def parse_problem(raw: bytes, base_dir: str = ".") -> Tuple[MayerProblem, ProblemFileModel]:
    """Путь к системе берется относительно каталога файла задачи"""
    try:
        model = ProblemFileModel.model_validate(orjson.loads(raw))
    except (orjson.JSONDecodeError, ValueError) as e:
        raise InputFormatError(f"Некорректный файл задачи: {e}") from e
    system_path = model.system if os.path.isabs(model.system) else os.path.join(base_dir, model.system)
    system = load_system(system_path)
    psi = CostFunction(model.psi, system.n, system.m)
    problem = MayerProblem(system, psi, np.array(model.x_bar), np.array(model.u_bar),
                           model.horizon[0], model.horizon[1])
    return problem, model


def load_problem(path: str) -> Tuple[MayerProblem, ProblemFileModel]:
    with open(path, "rb") as f:
        raw = f.read()
    problem, model = parse_problem(raw, os.path.dirname(os.path.abspath(path)))
    logger.debug(f"📥 Загружена задача из {path}: psi = {model.psi}")
    return problem, model
