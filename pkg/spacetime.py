"""
BV управления и space-time (graph completion) управления

Пространственно-временное управление - липшицев путь (u0, u) на [0, 1]:
u0 неубывает от a до b, u0' + |u'| <= b - a + K почти всюду.
На мостах u0' = 0 и динамика y' = sum_a g_a(y, u) u_a'.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import orjson
from pydantic import BaseModel, Field

from config import config
from controls import ControlSignal, UPiece, VPiece
from errors import ControlValidationError, InputFormatError, VariationBudgetError
from flowbox import FlowBoxChart
from solver import (
    ConvergenceReport,
    is_monotone_decreasing,
    loglog_slope,
    make_grid,
    march_piecewise,
    pd_solution,
)
from sysmodel import ControlAffineSystem

logger = logging.getLogger(__name__)

_SLOPE_RTOL = 1e-9
_NODE_TOL = 1e-12

BRIDGE_PROFILES = ("rectilinear", "ease-in", "ease-out", "smoothstep", "staircase")


# ---------------------------------------------------------------------------
# BV управления
# ---------------------------------------------------------------------------

def total_variation(u) -> float:
    """
    Var[u] = сумма вариаций кусков + величины скачков (по односторонним пределам),
    включая скачок в b
    """
    signal = u.signal if isinstance(u, BVControl) else u
    pieces = sum(p.variation() for p in signal.u_pieces)
    jumps = sum(float(np.linalg.norm(right - left)) for _, left, right in signal.jumps())
    return float(pieces + jumps)


@dataclass(frozen=True, eq=False)
class BVControl:
    """Управление с конечным числом кусков и вычисленной вариацией"""
    signal: ControlSignal
    var: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "var", total_variation(self.signal))

    @classmethod
    def from_signal(cls, signal: ControlSignal, K: Optional[float] = None) -> 'BVControl':
        bv = cls(signal)
        if K is not None and bv.var > K * (1 + _SLOPE_RTOL) + 1e-12:
            raise VariationBudgetError(f"Var[u] = {bv.var:.6g} больше бюджета K = {K:.6g}")
        return bv


# ---------------------------------------------------------------------------
# Space-time управления
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SpaceTimeControl:
    """
    Кусочно-аффинный путь (u0, u) по узлам s_0 = 0 < ... < s_P = 1,
    v постоянно на каждом сегменте.
    """
    nodes: np.ndarray        # (P+1,)
    u0_vals: np.ndarray      # (P+1,)
    u_vals: np.ndarray       # (P+1, m)
    v_vals: np.ndarray       # (P, l)
    K: float

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        u0 = np.asarray(self.u0_vals, dtype=float)
        u = np.atleast_2d(np.asarray(self.u_vals, dtype=float))
        if u.shape[0] != nodes.size and u.shape[1] == nodes.size:
            u = u.T
        v = np.asarray(self.v_vals, dtype=float)
        if v.ndim != 2:
            v = v.reshape(nodes.size - 1, -1) if v.size else np.zeros((nodes.size - 1, 0))
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "u0_vals", u0)
        object.__setattr__(self, "u_vals", u)
        object.__setattr__(self, "v_vals", v)

        if nodes.size < 2 or abs(nodes[0]) > _NODE_TOL or abs(nodes[-1] - 1.0) > _NODE_TOL:
            raise ControlValidationError("Узлы s должны идти от 0 до 1")
        if np.any(np.diff(nodes) <= 0):
            raise ControlValidationError("Узлы s должны строго возрастать")
        if u0.size != nodes.size or u.shape[0] != nodes.size:
            raise ControlValidationError("Длины u0, u и узлов различаются")
        if np.any(np.diff(u0) < -_NODE_TOL):
            raise ControlValidationError("u0 должно неубывать")
        if not u0[-1] > u0[0]:
            raise ControlValidationError("u0(1) должно быть больше u0(0)")
        if self.K < 0:
            raise VariationBudgetError("K должно быть >= 0")
        worst = float(np.max(self.slope_sums()))
        if worst > self.budget * (1 + _SLOPE_RTOL) + 1e-12:
            raise VariationBudgetError(
                f"u0' + |u'| = {worst:.9g} превышает b - a + K = {self.budget:.9g}"
            )

    # --- структура ---

    @property
    def a(self) -> float:
        return float(self.u0_vals[0])

    @property
    def b(self) -> float:
        return float(self.u0_vals[-1])

    @property
    def m(self) -> int:
        return self.u_vals.shape[1]

    @property
    def l(self) -> int:
        return self.v_vals.shape[1]

    @property
    def segments(self) -> int:
        return self.nodes.size - 1

    @property
    def budget(self) -> float:
        return self.b - self.a + self.K

    def u0_slopes(self) -> np.ndarray:
        return np.diff(self.u0_vals) / np.diff(self.nodes)

    def u_slopes(self) -> np.ndarray:
        return np.diff(self.u_vals, axis=0) / np.diff(self.nodes)[:, None]

    def slope_sums(self) -> np.ndarray:
        return self.u0_slopes() + np.linalg.norm(self.u_slopes(), axis=1)

    @property
    def bridges(self) -> List[bool]:
        """True на сегментах с u0' = 0"""
        return [bool(d <= _NODE_TOL) for d in np.diff(self.u0_vals)]

    @property
    def is_plus(self) -> bool:
        """Принадлежность U_K^+: u0' > 0 на каждом сегменте"""
        return not any(self.bridges)

    @property
    def min_u0_slope(self) -> float:
        return float(np.min(self.u0_slopes()))

    def variation(self) -> float:
        return float(np.sum(np.linalg.norm(np.diff(self.u_vals, axis=0), axis=1)))

    # --- значения ---

    def _segment(self, s: float) -> int:
        idx = int(np.searchsorted(self.nodes, s, side="right") - 1)
        return min(max(idx, 0), self.segments - 1)

    def u0(self, s: float) -> float:
        return float(np.interp(s, self.nodes, self.u0_vals))

    def u(self, s: float) -> np.ndarray:
        return np.array([np.interp(s, self.nodes, self.u_vals[:, i]) for i in range(self.m)])

    def v(self, s: float) -> np.ndarray:
        return self.v_vals[self._segment(s)]

    def s_of_t(self, t: float, side: str = "R") -> float:
        """
        s(t+) = max{s: u0(s) <= t}, s(t-) = min{s: u0(s) >= t}.
        На мосте в момент t они дают его правый и левый концы.
        """
        u0 = self.u0_vals
        if side == "R":
            i = int(np.searchsorted(u0, t, side="right") - 1)
            if i >= self.segments:
                return 1.0
            i = max(i, 0)
            slope = (u0[i + 1] - u0[i]) / (self.nodes[i + 1] - self.nodes[i])
            return float(self.nodes[i] + (t - u0[i]) / slope)
        j = int(np.searchsorted(u0, t, side="left"))
        if j <= 0:
            return 0.0
        j = min(j, self.segments)
        slope = (u0[j] - u0[j - 1]) / (self.nodes[j] - self.nodes[j - 1])
        return float(self.nodes[j - 1] + (t - u0[j - 1]) / slope)


# ---------------------------------------------------------------------------
# Построение graph completion
# ---------------------------------------------------------------------------

@dataclass
class _Segment:
    t_end: float        # u0 в конце сегмента
    u_end: np.ndarray   # u в конце сегмента
    du: np.ndarray
    raw: float          # длина до нормировки
    v: np.ndarray


def _profile_path(delta: np.ndarray, profile: str, subdivisions: int = 8) -> List[Tuple[np.ndarray, float]]:
    """
    Разбиение моста на куски (приращение u, относительная скорость <= 1).
    rectilinear - один кусок с единичной скоростью.
    """
    if profile == "rectilinear":
        return [(delta, 1.0)]
    if profile == "staircase":
        if delta.size > 1:
            # по одной координате за раз: путь не прямой
            steps = []
            for i in np.nonzero(delta)[0]:
                step = np.zeros_like(delta)
                step[i] = delta[i]
                steps.append((step, 1.0))
            return steps
        speeds = [1.0 if i % 2 == 0 else 0.25 for i in range(subdivisions)]
        return [(delta / subdivisions, sp) for sp in speeds]

    taus = np.linspace(0.0, 1.0, subdivisions + 1)
    if profile == "ease-in":
        shape = taus ** 2
    elif profile == "ease-out":
        shape = 1.0 - (1.0 - taus) ** 2
    elif profile == "smoothstep":
        shape = 3 * taus ** 2 - 2 * taus ** 3
    else:
        raise ValueError(f"Неизвестный профиль моста: {profile}")
    speeds = np.diff(shape) * subdivisions
    speeds = speeds / speeds.max()
    return [(delta * d, float(sp)) for d, sp in zip(np.diff(shape), speeds)]


def _graph_segments(signal: ControlSignal, profile: str = "rectilinear",
                    u_bar=None) -> Tuple[List[_Segment], np.ndarray]:
    for piece in signal.u_pieces:
        if piece.kind == "expression":
            raise ControlValidationError("Graph completion строится только для constant/affine кусков")

    no_v = np.zeros(0)
    jumps = {t: (left, right) for t, left, right in signal.jumps()}
    segments: List[_Segment] = []

    def add_bridge(t, left, right, v):
        left = np.asarray(left, dtype=float)
        right = np.asarray(right, dtype=float)
        path = _profile_path(right - left, profile)
        position = left
        for i, (du, speed) in enumerate(path):
            length = float(np.linalg.norm(du))
            position = right if i == len(path) - 1 else position + du
            if length > 0:
                segments.append(_Segment(t, position, du, length / speed, v))

    start_u = signal.u(signal.a)
    origin = start_u
    if u_bar is not None and np.linalg.norm(np.asarray(u_bar, dtype=float) - start_u) > 0:
        origin = np.asarray(u_bar, dtype=float)
        add_bridge(signal.a, origin, start_u, signal.v(signal.a) if signal.l else no_v)

    points = signal.breakpoints
    for t0, t1 in zip(points, points[1:]):
        u_start, u_end = signal.u(t0), signal.u_left(t1)
        du = u_end - u_start
        dt = t1 - t0
        v = signal.v(t0) if signal.l else no_v
        segments.append(_Segment(t1, u_end, du, dt + float(np.linalg.norm(du)), v))
        for tj, (left, right) in jumps.items():
            if abs(tj - t1) <= _NODE_TOL:
                add_bridge(t1, left, right, signal.v(t1) if signal.l else no_v)
    return segments, origin


def _assemble(segments: List[_Segment], a: float, b: float, u_start: np.ndarray,
              K: Optional[float]) -> SpaceTimeControl:
    """Нормирует длины сегментов на [0, 1]; K не меньше требуемого наклонами"""
    raw = np.array([seg.raw for seg in segments])
    total = float(raw.sum())
    nodes = np.concatenate([[0.0], np.cumsum(raw) / total])
    nodes[-1] = 1.0
    u0 = np.array([a] + [seg.t_end for seg in segments])
    u = np.vstack([u_start] + [seg.u_end for seg in segments])
    v = np.array([seg.v for seg in segments], dtype=float)
    if v.ndim != 2:
        v = np.zeros((len(segments), 0))
    required = total - (b - a)
    budget = required if K is None else max(K, required)
    return SpaceTimeControl(nodes, u0, u, v, float(budget))


def reparameterize_ac(signal: ControlSignal, K: Optional[float] = None) -> SpaceTimeControl:
    """
    s(t) = int_a^t (1 + |u'|) / int_a^b (1 + |u'|), u0 = s^{-1}, (u, v) по u0.
    Результат в U_K^+ с K = Var[u].
    """
    if not signal.is_ac:
        raise ControlValidationError("reparameterize_ac требует AC управления")
    segments, u_start = _graph_segments(signal)
    return _assemble(segments, signal.a, signal.b, u_start, K)


def rectilinear_completion(signal: ControlSignal, K: Optional[float] = None, u_bar=None) -> SpaceTimeControl:
    """
    Каждый скачок соединяется отрезком в u при замороженном времени.
    u_bar: начальное значение, отличное от u(a), дает ведущий мост в s = 0.
    """
    segments, u_start = _graph_segments(signal, "rectilinear", u_bar)
    stc = _assemble(segments, signal.a, signal.b, u_start, K)
    logger.debug(f"Graph completion: {sum(stc.bridges)} мостов, K = {stc.K:.6g}")
    return stc


def alternative_completion(signal: ControlSignal, profile: str, K: Optional[float] = None) -> SpaceTimeControl:
    """Graph completion с другим монотонным путем по мостам"""
    if profile not in BRIDGE_PROFILES:
        raise ValueError(f"Профиль {profile} не из {BRIDGE_PROFILES}")
    segments, u_start = _graph_segments(signal, profile)
    return _assemble(segments, signal.a, signal.b, u_start, K)


def to_time_control(stc: SpaceTimeControl) -> ControlSignal:
    """Обратно к AC управлению на [a, b]; только для U_K^+"""
    if not stc.is_plus:
        raise ControlValidationError("Управление с мостами не переводится в AC управление")
    times = stc.u0_vals
    pieces = []
    for i in range(stc.segments):
        t0, t1 = float(times[i]), float(times[i + 1])
        slope = (stc.u_vals[i + 1] - stc.u_vals[i]) / (t1 - t0)
        pieces.append(UPiece(t0, t1, "affine", tuple(stc.u_vals[i]), tuple(slope)))
    v_pieces = tuple(VPiece(float(times[i]), float(times[i + 1]), tuple(stc.v_vals[i]))
                     for i in range(stc.segments)) if stc.l else ()
    return ControlSignal(stc.a, stc.b, tuple(pieces), tuple(stc.u_vals[-1]), v_pieces, kind="AC")


# ---------------------------------------------------------------------------
# Space-time система
# ---------------------------------------------------------------------------

@dataclass
class SpaceTimeTrajectory:
    s: np.ndarray
    y0: np.ndarray      # (N,)
    y: np.ndarray       # (N, n)
    u: np.ndarray       # (N, m)

    def index_of(self, s: float) -> int:
        idx = int(np.argmin(np.abs(self.s - s)))
        if abs(self.s[idx] - s) > 1e-9:
            raise ValueError(f"s={s} не является узлом сетки")
        return idx

    def at(self, s: float) -> np.ndarray:
        return self.y[self.index_of(s)]

    @property
    def terminal(self) -> np.ndarray:
        """(y(1), u(1))"""
        return np.concatenate([self.y[-1], self.u[-1]])

    def sup_distance(self, other: 'SpaceTimeTrajectory', at: Optional[Sequence[float]] = None) -> float:
        points = self.s if at is None else at
        return float(max(np.linalg.norm(self.at(s) - other.at(s)) for s in points))


def _merge_points(*arrays) -> np.ndarray:
    merged = np.sort(np.concatenate([np.asarray(a, dtype=float).ravel() for a in arrays]))
    keep = np.concatenate([[True], np.diff(merged) > _NODE_TOL])
    return merged[keep]


def solve_spacetime(system: ControlAffineSystem, x_bar, stc: SpaceTimeControl,
                    s_eval: Optional[Sequence[float]] = None,
                    ode_tol: Optional[float] = None) -> SpaceTimeTrajectory:
    """
    y0' = u0',  y' = u0' f(y, u, v) + sum_a g_a(y, u) u_a'  на [0, 1]
    """
    tol = config.ode_tol if ode_tol is None else ode_tol
    if stc.m != system.m:
        raise ControlValidationError(f"Space-time управление размерности {stc.m} вместо m={system.m}")
    extra = np.asarray([] if s_eval is None else s_eval, dtype=float)
    # точки s_eval, слипшиеся с узлами управления, заменяются узлами
    if extra.size:
        extra = extra[np.min(np.abs(extra[:, None] - stc.nodes[None, :]), axis=1) > _NODE_TOL]
    grid = _merge_points(stc.nodes, extra)
    du0 = stc.u0_slopes()
    du = stc.u_slopes()
    drift_free = all(expr == 0 for expr in system.f_exprs)

    def rhs_for(s0):
        i = stc._segment(s0)
        if drift_free and not np.any(du[i]):
            return None
        s_i, u_i = stc.nodes[i], stc.u_vals[i]
        v = stc.v_vals[i] if stc.l else ()

        def rhs(s, y):
            u = u_i + du[i] * (s - s_i)
            out = du0[i] * system.f_tilde(y, u, v) if du0[i] != 0.0 else np.zeros(system.n)
            for alpha, d in enumerate(du[i]):
                if d != 0.0:
                    out = out + d * system.g_tilde(alpha, y, u)
            return out
        return rhs

    right, _ = march_piecewise(rhs_for, np.asarray(x_bar, dtype=float), list(stc.nodes), grid, tol)
    y0 = np.interp(grid, stc.nodes, stc.u0_vals)
    u = np.column_stack([np.interp(grid, stc.nodes, stc.u_vals[:, i]) for i in range(stc.m)])
    return SpaceTimeTrajectory(grid, y0, right, u)


# ---------------------------------------------------------------------------
# Эксперименты
# ---------------------------------------------------------------------------

def perturb_min_slope(stc: SpaceTimeControl, h: float) -> SpaceTimeControl:
    """
    Подмешивает к u0 равномерное время с весом theta = h / (b - a),
    длины сегментов перенормируются так, что путь остается в U_K.
    """
    span = stc.b - stc.a
    if stc.min_u0_slope >= h:
        return stc
    theta = min(h / span, 1.0)
    ds = np.diff(stc.nodes)
    du0 = (1.0 - theta) * np.diff(stc.u0_vals) + theta * span * ds
    du = np.diff(stc.u_vals, axis=0)
    raw = du0 + np.linalg.norm(du, axis=1)
    nodes = np.concatenate([[0.0], np.cumsum(raw) / raw.sum()])
    nodes[-1] = 1.0
    u0 = np.concatenate([[stc.a], stc.a + np.cumsum(du0)])
    u0[-1] = stc.b
    return SpaceTimeControl(nodes, u0, stc.u_vals, stc.v_vals, stc.K)


def density_study(system: ControlAffineSystem, x_bar, stc: SpaceTimeControl,
                  h_range: Optional[Sequence[float]] = None, tol_final: float = 1e-4,
                  n_compare: int = 201, ode_tol: Optional[float] = None) -> ConvergenceReport:
    """
    Приближение управления из U_K элементами U_K^+ и расстояние траекторий в sup-норме
    """
    span = stc.b - stc.a
    if h_range is None:
        h_range = [span * 2.0 ** (-j) for j in range(3, 15)]
    compare = np.linspace(0.0, 1.0, n_compare)
    reference = solve_spacetime(system, x_bar, stc, compare, ode_tol)

    rows = []
    for h in h_range:
        approx = perturb_min_slope(stc, h)
        traj = solve_spacetime(system, x_bar, approx, compare, ode_tol)
        rows.append({
            "h": float(h),
            "min_slope": approx.min_u0_slope,
            "sup_distance": reference.sup_distance(traj, compare),
            "terminal_distance": float(np.linalg.norm(reference.y[-1] - traj.y[-1])),
        })
        logger.info(f"🔄 density h={h:.3e}: sup |y_h - y| = {rows[-1]['sup_distance']:.3e}")

    distances = [r["sup_distance"] for r in rows]
    slope = loglog_slope([r["h"] for r in rows], distances)
    floor = 1e3 * (config.ode_tol if ode_tol is None else ode_tol)
    monotone = {"sup_distance": is_monotone_decreasing(distances, floor=floor)}
    # O(h): последнее расстояние не больше tol_final и наклон в log-log не меньше 0.9
    converging = bool(rows) and distances[-1] <= tol_final and slope is not None and slope >= 0.9
    # управление уже в U_K^+: возмущать нечего
    unchanged = bool(rows) and max(distances) <= floor
    passed = (converging or unchanged) and monotone["sup_distance"]
    return ConvergenceReport("density", rows, slope, monotone, passed,
                             {"tol_final": tol_final, "K": stc.K, "in_plus": stc.is_plus,
                              "terminal": reference.y[-1].tolist()})


@dataclass
class EquivalenceReport:
    max_deviation: float
    terminal_deviation: float
    tol_equiv: float
    n_times: int
    bridges: int

    @property
    def passed(self) -> bool:
        return self.max_deviation <= self.tol_equiv

    def to_dict(self) -> Dict:
        return {"max_deviation": self.max_deviation, "terminal_deviation": self.terminal_deviation,
                "tol_equiv": self.tol_equiv, "n_times": self.n_times, "bridges": self.bridges,
                "passed": self.passed}


def equivalence_pd_vs_spacetime(chart: FlowBoxChart, x_bar, signal: ControlSignal,
                                grid: Optional[np.ndarray] = None,
                                tol_equiv: Optional[float] = None) -> EquivalenceReport:
    """
    max по моментам t графика |x_pd(t) - y(s(t+))| для p.d. решения
    и решения space-time системы на rectilinear completion
    """
    tol_equiv = config.tol_equiv if tol_equiv is None else tol_equiv
    grid = make_grid(signal, 101) if grid is None else grid
    x_pd = pd_solution(chart, x_bar, signal, grid)
    stc = rectilinear_completion(signal)
    s_points = [stc.s_of_t(float(t), "R") for t in grid]
    y = solve_spacetime(chart.system, x_bar, stc, s_points, chart.ode_tol)

    deviations = [float(np.linalg.norm(x_pd.states[i] - y.at(s))) for i, s in enumerate(s_points)]
    report = EquivalenceReport(max(deviations), deviations[-1], tol_equiv, len(deviations), sum(stc.bridges))
    logger.info(f"📊 p.d. против space-time: max отклонение {report.max_deviation:.3e}")
    return report


def bridge_path_study(system: ControlAffineSystem, x_bar, signal: ControlSignal,
                      profiles: Sequence[str] = ("ease-in", "ease-out", "smoothstep", "staircase"),
                      ode_tol: Optional[float] = None) -> Dict[str, float]:
    """
    Отклонение y в концах мостов и в s = 1 для других путей по мостам
    относительно прямолинейного пути
    """
    reference = rectilinear_completion(signal)
    times = [t for t, _, _ in signal.jumps()] + [signal.b]

    def endpoints(stc):
        s_points = [stc.s_of_t(t, "R") for t in times]
        traj = solve_spacetime(system, x_bar, stc, s_points, ode_tol)
        return np.array([traj.at(s) for s in s_points])

    base = endpoints(reference)
    result = {}
    for profile in profiles:
        other = endpoints(alternative_completion(signal, profile))
        result[profile] = float(np.max(np.linalg.norm(other - base, axis=1)))
    logger.info(f"📊 Независимость от пути моста: {result}")
    return result


def straight_control(stc: SpaceTimeControl) -> SpaceTimeControl:
    """Прямой путь от (a, u(0)) до (b, u(1)) на тех же узлах"""
    u0 = stc.a + (stc.b - stc.a) * stc.nodes
    u = stc.u_vals[0] + np.outer(stc.nodes, stc.u_vals[-1] - stc.u_vals[0])
    return SpaceTimeControl(stc.nodes, u0, u, stc.v_vals, stc.K)


def closedness_probe(system: ControlAffineSystem, x_bar, stc: SpaceTimeControl,
                     thetas: Sequence[float] = (0.5, 0.25, 0.125, 0.0625, 0.03125),
                     tol: float = 1e-4, ode_tol: Optional[float] = None) -> ConvergenceReport:
    """
    Семейство (1 - theta) stc + theta * straight сходится к stc равномерно;
    решения должны сходиться к решению для предела.
    Имеет смысл только при f, не зависящем от v.
    """
    applicable = not system.depends_on_v
    straight = straight_control(stc)
    compare = np.linspace(0.0, 1.0, 101)
    limit = solve_spacetime(system, x_bar, stc, compare, ode_tol)
    rows = []
    for theta in thetas:
        member = SpaceTimeControl(
            stc.nodes,
            (1 - theta) * stc.u0_vals + theta * straight.u0_vals,
            (1 - theta) * stc.u_vals + theta * straight.u_vals,
            stc.v_vals, stc.K,
        )
        traj = solve_spacetime(system, x_bar, member, compare, ode_tol)
        control_gap = float(max(np.max(np.abs(member.u0_vals - stc.u0_vals)),
                                np.max(np.abs(member.u_vals - stc.u_vals))))
        rows.append({"theta": float(theta), "control_distance": control_gap,
                     "sup_distance": limit.sup_distance(traj, compare)})

    distances = [r["sup_distance"] for r in rows]
    floor = 1e3 * (config.ode_tol if ode_tol is None else ode_tol)
    monotone = {"sup_distance": is_monotone_decreasing(distances, floor=floor)}
    slope = loglog_slope([r["control_distance"] for r in rows], distances)
    converging = distances[-1] <= tol or (distances[-1] < distances[0] and slope is not None and slope >= 0.5)
    passed = applicable and bool(rows) and monotone["sup_distance"] and converging
    if not applicable:
        logger.warning("⚠️ Проба замкнутости: f зависит от v, результат не показателен")
    return ConvergenceReport("closedness", rows, slope, monotone, passed, {"applicable": applicable})


# ---------------------------------------------------------------------------
# Файлы
# ---------------------------------------------------------------------------

class SpaceTimeFileModel(BaseModel):
    nodes: List[float]
    u0: List[float]
    u: List[List[float]]
    v: List[List[float]] = Field(default_factory=list)
    K: float = Field(ge=0)
    bridges: Optional[List[bool]] = None


def load_spacetime(raw: bytes) -> SpaceTimeControl:
    try:
        model = SpaceTimeFileModel.model_validate(orjson.loads(raw))
    except (orjson.JSONDecodeError, ValueError) as e:
        raise InputFormatError(f"Некорректный файл space-time управления: {e}") from e
    v = np.array(model.v, dtype=float) if model.v else np.zeros((len(model.nodes) - 1, 0))
    return SpaceTimeControl(np.array(model.nodes), np.array(model.u0), np.array(model.u), v, model.K)


def dump_spacetime(stc: SpaceTimeControl) -> Dict:
    return SpaceTimeFileModel(
        nodes=stc.nodes.tolist(), u0=stc.u0_vals.tolist(), u=stc.u_vals.tolist(),
        v=stc.v_vals.tolist(), K=stc.K, bridges=stc.bridges,
    ).model_dump()
