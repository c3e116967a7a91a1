"""
Решения импульсной системы:

- solve_reduced: Каратеодори для xi' = F(xi, u, v) в flow-box координатах
- pd_solution: поточечно определенное решение x(t) = phi_pr(xi(t), -u(t))
- solve_original_ac: прямое интегрирование вложенной системы для AC управлений
- ac_approximation / pd_limit_study: AC аппроксимации и сходимость к p.d. решению
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from config import config
from controls import ControlSignal, UPiece, VPiece, piecewise_constant
from errors import HorizonError, ImpulseDomainError, NotAbsolutelyContinuousError
from flowbox import FlowBoxChart, exp_flow, integrate
from runner import run_parallel, spawn_rngs
from sysmodel import BoxSet, ControlAffineSystem

logger = logging.getLogger(__name__)

_MERGE_TOL = 1e-12


# ---------------------------------------------------------------------------
# Траектории и сетки
# ---------------------------------------------------------------------------

def make_grid(signal: ControlSignal, n_points: int = 201, extra: Iterable[float] = ()) -> np.ndarray:
    """
    Равномерная сетка плюс все точки излома управления (они входят точно)
    """
    anchors = sorted(set(signal.breakpoints) | {float(t) for t in extra})
    uniform = np.linspace(signal.a, signal.b, max(n_points, 2))
    anchor_arr = np.array(anchors)
    keep = [t for t in uniform if np.min(np.abs(anchor_arr - t)) > _MERGE_TOL]
    grid = np.array(sorted(set(anchors) | set(keep)))
    return grid[(grid >= signal.a) & (grid <= signal.b)]


def trapezoid_l1(times: np.ndarray, left: np.ndarray, right: np.ndarray) -> float:
    """
    int |y| dt по трапециям: на [t_i, t_{i+1}] берем правое значение в t_i и левое в t_{i+1}
    """
    if times.size < 2:
        return 0.0
    a = np.linalg.norm(np.atleast_2d(right[:-1]).reshape(times.size - 1, -1), axis=1)
    b = np.linalg.norm(np.atleast_2d(left[1:]).reshape(times.size - 1, -1), axis=1)
    return float(np.sum(0.5 * (a + b) * np.diff(times)))


@dataclass
class Trajectory:
    """
    Сетка времени, значения x(t) и левые пределы x(t-) в узлах.
    В точках непрерывности u левый и правый пределы совпадают.
    """
    times: np.ndarray
    states: np.ndarray               # (N, n) значения x(t)
    states_left: np.ndarray          # (N, n) левые пределы
    controls: np.ndarray             # (N, m) u(t) или z(t)
    controls_left: np.ndarray        # (N, m)
    jump_times: List[float] = field(default_factory=list)
    reduced: Optional[np.ndarray] = None   # xi(t) для p.d. решений

    def __post_init__(self):
        if not np.all(np.diff(self.times) > 0):
            raise ValueError("Сетка траектории должна строго возрастать")
        if not np.all(np.isfinite(self.states)) or not np.all(np.isfinite(self.states_left)):
            raise ValueError("Траектория содержит нечисловые значения")

    @property
    def n(self) -> int:
        return self.states.shape[1]

    def index_of(self, t: float) -> int:
        idx = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[idx] - t) > 1e-9:
            raise HorizonError(f"Момент t={t} не является узлом сетки")
        return idx

    def at(self, t: float, side: str = "R") -> np.ndarray:
        idx = self.index_of(t)
        return (self.states if side == "R" else self.states_left)[idx]

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def norm_l1(self) -> float:
        return trapezoid_l1(self.times, self.states_left, self.states)

    def l1_distance(self, other: 'Trajectory') -> float:
        if self.times.shape != other.times.shape or np.any(np.abs(self.times - other.times) > 1e-12):
            raise ValueError("Траектории на разных сетках")
        return trapezoid_l1(self.times, self.states_left - other.states_left, self.states - other.states)

    def sup_distance(self, other: 'Trajectory') -> float:
        if self.times.shape != other.times.shape:
            raise ValueError("Траектории на разных сетках")
        right = np.max(np.linalg.norm(self.states - other.states, axis=1))
        left = np.max(np.linalg.norm(self.states_left - other.states_left, axis=1))
        return float(max(right, left))

    def rows(self) -> List[Tuple[float, str, List[float], List[float]]]:
        """Строки для CSV: (t, side, x, u); в точках разрыва сначала L, потом R"""
        jumps = set(self.jump_times)
        out = []
        for i, t in enumerate(self.times):
            if any(abs(t - tj) <= 1e-12 for tj in jumps):
                out.append((float(t), "L", self.states_left[i].tolist(), self.controls_left[i].tolist()))
            out.append((float(t), "R", self.states[i].tolist(), self.controls[i].tolist()))
        return out


def march_piecewise(rhs_for: Callable[[float], Optional[Callable]], y0: np.ndarray, breakpoints: Sequence[float],
                    grid: np.ndarray, tol: float,
                    jump: Optional[Callable[[float, np.ndarray], Optional[np.ndarray]]] = None
                    ) -> Tuple[np.ndarray, np.ndarray]:
    """
    Кусочное интегрирование между точками излома.
    rhs_for(t0) дает правую часть на [t0, t1] (None - нулевая);
    jump(t, y_left) дает y после разрыва в t или None.
    Возвращает (правые значения, левые пределы) в узлах сетки.
    """
    y = np.asarray(y0, dtype=float).copy()
    right = np.empty((grid.size, y.size))
    left = np.empty((grid.size, y.size))
    right[0] = left[0] = y

    for t0, t1 in zip(breakpoints, breakpoints[1:]):
        mask = (grid > t0) & (grid <= t1)
        nodes = grid[mask]
        idx = np.nonzero(mask)[0]
        if nodes.size == 0 or abs(nodes[-1] - t1) > _MERGE_TOL:
            raise ValueError(f"Точка излома t={t1} отсутствует в сетке")
        rhs = rhs_for(t0)
        if rhs is None:
            values = np.tile(y, (nodes.size, 1))
        else:
            sol = integrate(rhs, (t0, t1), y, tol, t_eval=nodes)
            values = sol.y.T
        right[idx] = values
        left[idx] = values
        y = values[-1].copy()
        if jump is not None:
            after = jump(t1, y)
            if after is not None:
                y = np.asarray(after, dtype=float)
                right[idx[-1]] = y
    return right, left


def _control_arrays(signal: ControlSignal, grid: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    return (np.array([signal.u(t) for t in grid]),
            np.array([signal.u_left(t) for t in grid]))


# ---------------------------------------------------------------------------
# Редуцированная система и p.d. решение
# ---------------------------------------------------------------------------

def _drift_is_zero(system: ControlAffineSystem) -> bool:
    return all(expr == 0 for expr in system.f_exprs)


def solve_reduced(chart: FlowBoxChart, xi_bar, signal: ControlSignal,
                  grid: Optional[np.ndarray] = None, ode_tol: Optional[float] = None) -> Trajectory:
    """
    xi' = F(xi, u(t), v(t)), xi(a) = xi_bar. u входит только как аргумент F,
    поэтому xi непрерывна и в точках разрыва u.
    """
    grid = make_grid(signal) if grid is None else np.asarray(grid, dtype=float)
    tol = chart.ode_tol if ode_tol is None else ode_tol
    xi_bar = np.asarray(xi_bar, dtype=float)
    if not np.all(np.isfinite(xi_bar)):
        raise ValueError("xi_bar должен быть конечным")

    zero = _drift_is_zero(chart.system)

    def rhs_for(t0):
        if zero:
            return None
        piece = signal.u_piece_at(t0)
        v = signal.v(t0)
        return lambda t, xi: chart.pushforward_drift(xi, piece.at(t), v)

    right, left = march_piecewise(rhs_for, xi_bar, signal.breakpoints, grid, tol)
    u_right, u_left = _control_arrays(signal, grid)
    return Trajectory(grid, right, left, u_right, u_left, [])


def pd_solution(chart: FlowBoxChart, x_bar, signal: ControlSignal,
                grid: Optional[np.ndarray] = None) -> Trajectory:
    """
    Поточечно определенное решение:
        xi_bar = phi_pr(x_bar, u(a)),  x(t) = phi_pr(xi(t), -u(t))
    x разрывна ровно там, где разрывна u.
    """
    grid = make_grid(signal) if grid is None else np.asarray(grid, dtype=float)
    xi_bar = chart.phi_pr(x_bar, signal.u(signal.a))
    reduced = solve_reduced(chart, xi_bar, signal, grid)

    jump_times = signal.jump_times
    u_right, u_left = reduced.controls, reduced.controls_left
    states = np.empty_like(reduced.states)
    states_left = np.empty_like(reduced.states)
    for i, t in enumerate(grid):
        xi = reduced.states[i]
        states[i] = chart.phi_pr(xi, -u_right[i])
        if any(abs(t - tj) <= _MERGE_TOL for tj in jump_times):
            states_left[i] = chart.phi_pr(xi, -u_left[i])
        else:
            states_left[i] = states[i]
    logger.debug(f"p.d. решение: {grid.size} узлов, {len(jump_times)} разрывов")
    return Trajectory(grid, states, states_left, u_right, u_left, jump_times, reduced=reduced.states)


def jump_map(system: ControlAffineSystem, x_left, u_left, u_right,
             ode_tol: Optional[float] = None) -> np.ndarray:
    """
    x после скачка u_left -> u_right: поток за единичное время поля sum_a (du_a) g_a
    из точки (x_left, u_left). Путь скачка не важен при коммутирующих g.
    """
    delta = np.asarray(u_right, dtype=float) - np.asarray(u_left, dtype=float)
    if not np.any(delta):
        return np.asarray(x_left, dtype=float).copy()
    p = np.concatenate([np.asarray(x_left, dtype=float), np.asarray(u_left, dtype=float)])

    def field(q):
        out = np.zeros(q.size)
        for alpha, d in enumerate(delta):
            if d != 0.0:
                out += d * system.g_ext(alpha, q)
        return out

    return exp_flow(field, 1.0, p, ode_tol)[:system.n]


def _embedded_rhs(system: ControlAffineSystem, piece: UPiece, v: np.ndarray):
    """x' = f(x, u(t), v) + sum_a g_a(x, u(t)) u_a'(t) при заданном u"""
    def rhs(t, x):
        u = piece.at(t)
        u_dot = piece.derivative(t)
        out = system.f_tilde(x, u, v)
        for alpha, d in enumerate(u_dot):
            if d != 0.0:
                out = out + d * system.g_tilde(alpha, x, u)
        return out
    return rhs


def pd_solution_by_jumps(system: ControlAffineSystem, x_bar, signal: ControlSignal,
                         grid: Optional[np.ndarray] = None, ode_tol: Optional[float] = None) -> Trajectory:
    """
    То же p.d. решение без карты phi: интегрирование на AC кусках
    и отображение скачка в точках разрыва u.
    """
    grid = make_grid(signal) if grid is None else np.asarray(grid, dtype=float)
    tol = config.ode_tol if ode_tol is None else ode_tol
    jumps = {t: (left, right) for t, left, right in signal.jumps()}

    def rhs_for(t0):
        return _embedded_rhs(system, signal.u_piece_at(t0), signal.v(t0))

    def jump(t, x_left):
        for tj, (ul, ur) in jumps.items():
            if abs(t - tj) <= _MERGE_TOL:
                return jump_map(system, x_left, ul, ur, tol)
        return None

    right, left = march_piecewise(rhs_for, np.asarray(x_bar, dtype=float), signal.breakpoints, grid, tol, jump)
    u_right, u_left = _control_arrays(signal, grid)
    return Trajectory(grid, right, left, u_right, u_left, sorted(jumps))


def solve_original_ac(system: ControlAffineSystem, x_bar, signal: ControlSignal,
                      grid: Optional[np.ndarray] = None, z_bar=None,
                      ode_tol: Optional[float] = None) -> Trajectory:
    """
    Прямое интегрирование вложенной системы
        x' = f(x, z, v) + sum_a g_a(x, z) u_a',  z' = u'
    с (x, z)(a) = (x_bar, z_bar), по умолчанию z_bar = u(a).
    """
    if not signal.is_ac:
        raise NotAbsolutelyContinuousError(f"Управление имеет разрывы в {signal.jump_times}")
    grid = make_grid(signal) if grid is None else np.asarray(grid, dtype=float)
    tol = config.ode_tol if ode_tol is None else ode_tol
    n = system.n
    z0 = signal.u(signal.a) if z_bar is None else np.asarray(z_bar, dtype=float)

    def rhs_for(t0):
        piece = signal.u_piece_at(t0)
        v = signal.v(t0)

        def rhs(t, y):
            x, z = y[:n], y[n:]
            u_dot = piece.derivative(t)
            out = system.f_tilde(x, z, v)
            for alpha, d in enumerate(u_dot):
                if d != 0.0:
                    out = out + d * system.g_tilde(alpha, x, z)
            return np.concatenate([out, u_dot])
        return rhs

    y0 = np.concatenate([np.asarray(x_bar, dtype=float), z0])
    right, left = march_piecewise(rhs_for, y0, signal.breakpoints, grid, tol)
    return Trajectory(grid, right[:, :n], left[:, :n], right[:, n:], left[:, n:], [])


def toy_closed_form(signal: ControlSignal, x_bar: float, t: float, side: str = "R") -> float:
    """
    Для x' = x v + x u': x(t) = x_bar * exp(int_a^t v + u(t) - u(a))
    """
    drift = 0.0
    for piece in signal.v_pieces:
        lo, hi = piece.start, min(piece.end, t)
        if hi > lo:
            drift += piece.value[0] * (hi - lo)
    u_t = signal.u(t) if side == "R" else signal.u_left(t)
    return float(x_bar * np.exp(drift + u_t[0] - signal.u(signal.a)[0]))


# ---------------------------------------------------------------------------
# AC аппроксимации
# ---------------------------------------------------------------------------

def ramp_width(signal: ControlSignal, k: int) -> float:
    """w_k = (b - a) / (4^k * #скачков), но не шире трети самого короткого куска"""
    jumps = signal.jumps()
    if not jumps:
        return 0.0
    width = (signal.b - signal.a) / (4.0 ** k * len(jumps))
    shortest = min(p.width for p in signal.u_pieces)
    return min(width, shortest / 3.0)


def _lookup(table: Dict[float, np.ndarray], t: float) -> Optional[np.ndarray]:
    for key, value in table.items():
        if abs(key - t) <= _MERGE_TOL:
            return value
    return None


def ac_approximation(signal: ControlSignal, t_star: float, k: int,
                     U=None) -> ControlSignal:
    """
    Заменяет каждый скачок u линейной рампой ширины w_k.
    Рампы не задевают a и t_star, поэтому u_k(a) = u(a), u_k(t_star) = u(t_star).
    Выпуклость U сохраняет значения рамп допустимыми.
    """
    if t_star < signal.a or t_star > signal.b:
        raise HorizonError(f"t_star={t_star} вне [{signal.a}, {signal.b}]")
    if U is not None and not U.is_convex:
        raise ImpulseDomainError("AC аппроксимация требует выпуклого U")
    if signal.is_ac:
        return signal

    w = ramp_width(signal, k)
    # ramp_after[t] / ramp_before[t]: скачки, которые сглаживаются справа / слева
    ramp_after: Dict[float, np.ndarray] = {}
    ramp_before: Dict[float, np.ndarray] = {}
    for t, left, right in signal.jumps():
        before = t >= signal.b or abs(t - t_star) <= _MERGE_TOL or t < t_star <= t + w
        if before:
            ramp_before[t] = right
        else:
            ramp_after[t] = left

    pieces: List[UPiece] = []
    for piece in signal.u_pieces:
        start, end = piece.start, piece.end
        origin = _lookup(ramp_after, start)
        if origin is not None:
            target = piece.at(start + w)
            pieces.append(UPiece(start, start + w, "affine", tuple(origin), tuple((target - origin) / w)))
            start += w
        tail = _lookup(ramp_before, end)
        if tail is not None:
            body_end = end - w
            pieces.append(piece.shifted(start, body_end))
            origin = piece.at(body_end)
            pieces.append(UPiece(body_end, end, "affine", tuple(origin), tuple((tail - origin) / w)))
        else:
            pieces.append(piece.shifted(start, end))

    approx = ControlSignal(signal.a, signal.b, tuple(pieces), signal.u_end, signal.v_pieces,
                           kind="AC", truncation_level=signal.truncation_level)
    logger.debug(f"AC аппроксимация k={k}: w={w:.3e}, {len(signal.jumps())} рамп")
    return approx


# ---------------------------------------------------------------------------
# Исследования сходимости
# ---------------------------------------------------------------------------

@dataclass
class ConvergenceReport:
    """Таблица сходимости: строки, наклон в log-log, флаги контракта"""
    study: str
    rows: List[Dict[str, float]]
    slope: Optional[float]
    monotone: Dict[str, bool]
    passed: bool
    details: Dict[str, object] = field(default_factory=dict)

    def column(self, name: str) -> List[float]:
        return [row[name] for row in self.rows]

    def to_dict(self) -> Dict:
        return {
            "study": self.study,
            "rows": self.rows,
            "slope": self.slope,
            "monotone": self.monotone,
            "passed": self.passed,
            "details": self.details,
        }


def is_monotone_decreasing(values: Sequence[float], noise: float = 0.05, floor: float = 1e-12) -> bool:
    """Каждое следующее значение не больше предыдущего с допуском 5% шума"""
    return all(b <= a * (1.0 + noise) + floor for a, b in zip(values, values[1:]))


def loglog_slope(xs: Sequence[float], ys: Sequence[float], floor: float = 1e-14) -> Optional[float]:
    pairs = [(x, y) for x, y in zip(xs, ys) if x > floor and y > floor]
    if len(pairs) < 2:
        return None
    lx, ly = np.log([p[0] for p in pairs]), np.log([p[1] for p in pairs])
    if np.ptp(lx) == 0:
        return None
    return float(np.polyfit(lx, ly, 1)[0])


def _ramp_grid(base: np.ndarray, approx: ControlSignal, per_ramp: int = 8) -> np.ndarray:
    extra = set(base.tolist()) | set(approx.breakpoints)
    for piece in approx.u_pieces:
        if piece.kind == "affine" and piece.width < (approx.b - approx.a) / 4:
            extra.update(np.linspace(piece.start, piece.end, per_ramp + 2).tolist())
    grid = np.array(sorted(extra))
    keep = np.concatenate([[True], np.diff(grid) > _MERGE_TOL])
    return grid[keep]


def pd_limit_study(chart: FlowBoxChart, x_bar, signal: ControlSignal, t_star: float,
                   k_range: Sequence[int], n_points: int = 201, tol_final: float = 1e-4,
                   pd_method: str = "chart") -> ConvergenceReport:
    """
    Для каждого k: u_k = ac_approximation, x_k = solve_original_ac.
    Отчет: ||u_k - u||_1, ||x_k - x_pd||_1, |x_k(t*) - x_pd(t*)|.
    """
    base = make_grid(signal, n_points, extra=[t_star])
    rows = []
    for k in k_range:
        approx = ac_approximation(signal, t_star, k, chart.system.U)
        grid = _ramp_grid(base, approx)
        if pd_method == "jumps":
            x_pd = pd_solution_by_jumps(chart.system, x_bar, signal, grid, chart.ode_tol)
        else:
            x_pd = pd_solution(chart, x_bar, signal, grid)
        x_k = solve_original_ac(chart.system, x_bar, approx, grid, ode_tol=chart.ode_tol)
        rows.append({
            "k": float(k),
            "w_k": ramp_width(signal, k),
            "u_l1": approx.l1_distance(signal),
            "x_l1": x_k.l1_distance(x_pd),
            "x_tstar": float(np.linalg.norm(x_k.at(t_star) - x_pd.at(t_star))),
        })
        logger.info(f"🔄 pdlimit k={k}: |x_k - x_pd|_1 = {rows[-1]['x_l1']:.3e}, "
                    f"|x_k(t*) - x_pd(t*)| = {rows[-1]['x_tstar']:.3e}")

    x_l1 = [r["x_l1"] for r in rows]
    x_ts = [r["x_tstar"] for r in rows]
    slope = loglog_slope([r["u_l1"] for r in rows], x_l1)
    # Ниже этого уровня разности - шум интегратора
    noise_floor = 1e3 * chart.ode_tol
    monotone = {"x_l1": is_monotone_decreasing(x_l1, floor=noise_floor),
                "x_tstar": is_monotone_decreasing(x_ts, floor=noise_floor)}
    final_ok = bool(rows) and x_l1[-1] <= tol_final and x_ts[-1] <= tol_final
    passed = final_ok and all(monotone.values())
    return ConvergenceReport("pdlimit", rows, slope, monotone, passed,
                             {"t_star": t_star, "tol_final": tol_final, "ac_input": signal.is_ac})


@dataclass
class LipschitzReport:
    constant: float
    pairs_used: int
    skipped: int
    ratios: List[float]

    def to_dict(self) -> Dict:
        return {"constant": self.constant, "pairs_used": self.pairs_used,
                "skipped": self.skipped, "max_ratio_per_pair": self.ratios}


def random_piecewise_control(rng: np.random.Generator, box: BoxSet, a: float, b: float, n_pieces: int,
                             v_pieces: Sequence[VPiece] = ()) -> ControlSignal:
    times = np.linspace(a, b, n_pieces + 1)
    values = box.sample(rng, n_pieces + 1)
    return piecewise_constant(times.tolist(), list(values[:-1]), u_end=values[-1], v_pieces=v_pieces)


def lipschitz_dependence_probe(chart: FlowBoxChart, r: float, K_box: BoxSet, n_pairs: int,
                               v_pieces: Sequence[VPiece] = (), seed: int = 0,
                               a: float = 0.0, b: float = 1.0, n_pieces: int = 4,
                               pairs: Optional[Sequence[Tuple]] = None,
                               method: str = "chart", threads: Optional[int] = None) -> LipschitzReport:
    """
    max по парам и по 10 моментам t отношения
    (|x1(t)-x2(t)| + |x1-x2|_1) / (|x1_bar-x2_bar| + |u1(a)-u2(a)| + |u1(t)-u2(t)| + |u1-u2|_1)
    pairs: явный список ((x1_bar, u1), (x2_bar, u2)) вместо случайных.
    """
    if pairs is None and n_pairs < 10:
        raise ValueError("n_pairs должен быть >= 10")
    if pairs is None:
        # у каждой пары свой поток: первые N пар не зависят от n_pairs
        pairs = []
        n = chart.n
        for rng in spawn_rngs(seed, "lipschitz", n_pairs):
            pair = []
            for _ in range(2):
                direction = rng.normal(size=n)
                direction /= np.linalg.norm(direction) or 1.0
                x0 = direction * r * rng.random() ** (1.0 / n)
                pair.append((x0, random_piecewise_control(rng, K_box, a, b, n_pieces, v_pieces)))
            pairs.append(tuple(pair))

    sample_times = np.linspace(a, b, 10)

    def pair_ratio(pair) -> Optional[float]:
        (x1_bar, u1), (x2_bar, u2) = pair
        grid = make_grid(u1, 101, extra=list(sample_times) + u2.breakpoints)
        if method == "jumps":
            x1 = pd_solution_by_jumps(chart.system, x1_bar, u1, grid, chart.ode_tol)
            x2 = pd_solution_by_jumps(chart.system, x2_bar, u2, grid, chart.ode_tol)
        else:
            x1 = pd_solution(chart, x1_bar, u1, grid)
            x2 = pd_solution(chart, x2_bar, u2, grid)
        x_l1 = x1.l1_distance(x2)
        u_l1 = u1.l1_distance(u2)
        base = float(np.linalg.norm(np.asarray(x1_bar) - np.asarray(x2_bar))
                     + np.linalg.norm(u1.u(a) - u2.u(a))) + u_l1
        pair_max = None
        for t in sample_times:
            denominator = base + float(np.linalg.norm(u1.u(t) - u2.u(t)))
            if denominator <= 0.0:
                continue
            numerator = float(np.linalg.norm(x1.at(t) - x2.at(t))) + x_l1
            pair_max = max(pair_max or 0.0, numerator / denominator)
        return pair_max

    results = run_parallel(pair_ratio, list(pairs), threads)
    ratios = [value for value in results if value is not None]
    skipped = len(results) - len(ratios)

    constant = max(ratios) if ratios else 0.0
    logger.info(f"📊 Липшицева зависимость: M ~ {constant:.4g} ({len(ratios)} пар, пропущено {skipped})")
    return LipschitzReport(constant, len(ratios), skipped, ratios)
