"""
Компактифицированный гамильтониан и сеточная функция цены W_K(t, x, u, k)

    H = sup { (p_t + p_x f) w0 + sum_a (p_x g_a + p_u_a) w_a + p_k sum_a |w_a| :
              w0 >= 0, w0 + sum_a |w_a| <= 1, v in V }

W_K считается полулагранжевой схемой назад по времени: шаг дрейфа
и импульсная релаксация по слоям k (k - уже потраченная вариация).
"""
import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field, model_validator
from scipy.interpolate import RegularGridInterpolator

from artifacts import write_csv
from config import config
from errors import DimensionMismatchError, ImpulseDomainError, SweepMonotonicityError, SweepNotConvergedError
from mayer import ControlParameterization, MayerProblem, estimate_value
from solver import is_monotone_decreasing
from sysmodel import BoxSet, ControlAffineSystem, FullSpace, control_grid

logger = logging.getLogger(__name__)

GRID_MAGIC = b"WKGRID01"
_EDGE_TOL = 1e-12


# ---------------------------------------------------------------------------
# Гамильтониан
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CostateVector:
    p_t: float
    p_x: Tuple[float, ...]
    p_u: Tuple[float, ...]
    p_k: float

    def __post_init__(self):
        object.__setattr__(self, "p_t", float(self.p_t))
        object.__setattr__(self, "p_k", float(self.p_k))
        object.__setattr__(self, "p_x", tuple(float(v) for v in np.atleast_1d(self.p_x)))
        object.__setattr__(self, "p_u", tuple(float(v) for v in np.atleast_1d(self.p_u)))
        values = (self.p_t, self.p_k) + self.p_x + self.p_u
        if not all(np.isfinite(values)):
            raise ValueError(f"Нечисловая компонента костейта: {values}")

    def scaled(self, factor: float) -> 'CostateVector':
        return CostateVector(factor * self.p_t, tuple(factor * np.array(self.p_x)),
                             tuple(factor * np.array(self.p_u)), factor * self.p_k)


@dataclass(frozen=True)
class HamiltonianValue:
    value: float
    w0: float
    w: Tuple[float, ...]
    v: Tuple[float, ...]


def _check_costate(system: ControlAffineSystem, p: CostateVector):
    if len(p.p_x) != system.n or len(p.p_u) != system.m:
        raise DimensionMismatchError(
            f"Костейт размерности ({len(p.p_x)}, {len(p.p_u)}) вместо (n={system.n}, m={system.m})"
        )


def pre_hamiltonian(system: ControlAffineSystem, t: float, x, u, k: float, p: CostateVector,
                    w0: float, w, v=()) -> float:
    if w0 < 0:
        raise ValueError("w0 должно быть >= 0")
    _check_costate(system, p)
    p_x = np.array(p.p_x)
    w = np.atleast_1d(np.asarray(w, dtype=float))
    drift = p.p_t + float(p_x @ system.f_tilde(x, u, v))
    value = drift * w0 + p.p_k * float(np.sum(np.abs(w)))
    for alpha in range(system.m):
        if w[alpha] != 0.0:
            value += (float(p_x @ system.g_tilde(alpha, x, u)) + p.p_u[alpha]) * w[alpha]
    return float(value)


def hamiltonian(system: ControlAffineSystem, t: float, x, u, k: float, p: CostateVector,
                v_points: Optional[np.ndarray] = None) -> HamiltonianValue:
    """
    Перебор вершин симплекса: 0, дрейф (w0 = 1), импульсы w = +-e_a.
    При равенстве остается более ранняя вершина: 0 < дрейф < импульс, меньший a, sigma = +1.
    """
    _check_costate(system, p)
    if v_points is None:
        v_points = control_grid(system.V, system.l)
    p_x = np.array(p.p_x)
    v_first = tuple(v_points[0])
    best = HamiltonianValue(0.0, 0.0, tuple([0.0] * system.m), v_first)

    for v in v_points:
        drift = p.p_t + float(p_x @ system.f_tilde(x, u, v))
        if drift > best.value:
            best = HamiltonianValue(drift, 1.0, tuple([0.0] * system.m), tuple(v))

    for alpha in range(system.m):
        b_alpha = float(p_x @ system.g_tilde(alpha, x, u)) + p.p_u[alpha]
        for sigma in (1.0, -1.0):
            value = sigma * b_alpha + p.p_k
            if value > best.value:
                w = [0.0] * system.m
                w[alpha] = sigma
                best = HamiltonianValue(value, 0.0, tuple(w), v_first)
    return best


# ---------------------------------------------------------------------------
# Сетка
# ---------------------------------------------------------------------------

class GridSpec(BaseModel):
    """Сетка для W_K: бокс по x, число узлов на ось x/u и шагов по времени"""
    x_lo: List[float]
    x_hi: List[float]
    u_lo: Optional[List[float]] = None
    u_hi: Optional[List[float]] = None
    per_axis: int = Field(default=41, ge=2)
    time_steps: int = Field(default=51, ge=1)
    max_sweeps: int = Field(default=50, ge=1)
    characteristic_solver: Literal["euler", "rk4"] = "rk4"
    substeps: int = Field(default=4, ge=1)

    @model_validator(mode="after")
    def _check_box(self):
        if len(self.x_lo) != len(self.x_hi):
            raise ValueError("x_lo и x_hi разной длины")
        if any(lo >= hi for lo, hi in zip(self.x_lo, self.x_hi)):
            raise ValueError("x_lo должно быть меньше x_hi по каждой оси")
        return self

    @classmethod
    def for_problem(cls, problem: MayerProblem, overrides: Optional[Dict[str, Any]] = None) -> 'GridSpec':
        """Бокс по умолчанию: x_bar +- 2 (1 + |x_bar|)"""
        data = dict(overrides or {})
        if "x_lo" not in data or "x_hi" not in data:
            half = 2.0 * (1.0 + np.abs(problem.x_bar))
            data.setdefault("x_lo", (problem.x_bar - half).tolist())
            data.setdefault("x_hi", (problem.x_bar + half).tolist())
        return cls.model_validate(data)

    def coarsened(self, level: int) -> 'GridSpec':
        """Шаги в 2^level раз крупнее"""
        factor = 2 ** level
        return self.model_copy(update={
            "per_axis": max(2, (self.per_axis - 1) // factor + 1),
            "time_steps": max(1, self.time_steps // factor),
        })


def _u_bounds(system: ControlAffineSystem, spec: GridSpec) -> Tuple[np.ndarray, np.ndarray]:
    if not isinstance(system.U, (BoxSet, FullSpace)):
        raise ImpulseDomainError("Сетка W_K строится только для U = box или full")
    lo, hi = system.U.bounds()
    if spec.u_lo is not None:
        lo = np.maximum(lo, spec.u_lo)
    if spec.u_hi is not None:
        hi = np.minimum(hi, spec.u_hi)
    if np.any(hi <= lo):
        raise ImpulseDomainError(f"Вырожденный бокс U на сетке: [{lo}, {hi}]")
    return lo, hi


@dataclass
class ValueGrid:
    """
    values[i, x1..xn, u1..um, j] = W_K(t_i, x, u, k_j).
    Срез values[-1] равен psi для всех k.
    """
    n: int
    m: int
    axes: List[np.ndarray]          # t, x1..xn, u1..um, k
    values: np.ndarray
    diagnostics: Dict[str, Any] = field(default_factory=dict)

    @property
    def names(self) -> List[str]:
        return ["t"] + [f"x{i + 1}" for i in range(self.n)] + [f"u{i + 1}" for i in range(self.m)] + ["k"]

    @property
    def spacing(self) -> Dict[str, float]:
        return {name: float(axis[1] - axis[0]) if axis.size > 1 else 0.0
                for name, axis in zip(self.names, self.axes)}

    @property
    def xu_axes(self) -> List[np.ndarray]:
        return self.axes[1:1 + self.n + self.m]

    def _layer(self, t_index: int, k_index: int, x, u) -> float:
        interp = RegularGridInterpolator(tuple(self.xu_axes), self.values[t_index, ..., k_index])
        point = np.concatenate([np.atleast_1d(x), np.atleast_1d(u)]).astype(float)
        lo = np.array([a[0] for a in self.xu_axes])
        hi = np.array([a[-1] for a in self.xu_axes])
        return float(interp(np.clip(point, lo, hi)[None, :])[0])

    def value_at(self, x, u, k: float = 0.0, t_index: int = 0) -> float:
        """Линейная интерполяция по (x, u) и по k между соседними слоями"""
        k_axis = self.axes[-1]
        if k_axis.size == 1:
            return self._layer(t_index, 0, x, u)
        k = float(np.clip(k, k_axis[0], k_axis[-1]))
        j = min(int(np.searchsorted(k_axis, k, side="right") - 1), k_axis.size - 2)
        theta = (k - k_axis[j]) / (k_axis[j + 1] - k_axis[j])
        low = self._layer(t_index, j, x, u)
        if theta == 0.0:
            return low
        return (1 - theta) * low + theta * self._layer(t_index, j + 1, x, u)

    def is_monotone_in_k(self, tol: float = 1e-12) -> bool:
        """W не убывает с ростом потраченной вариации k во всех узлах"""
        return bool(np.all(np.diff(self.values, axis=-1) >= -tol))

    # --- файлы ---

    def save_binary(self, path: str) -> str:
        """
        Формат: b"WKGRID01", <u4 n, <u4 m, <u4 длины осей (n+m+2 штук),
        узлы осей <f8 подряд, значения <f8 в row-major порядке
        """
        header = np.array([self.n, self.m] + [a.size for a in self.axes], dtype="<u4")
        with open(path, "wb") as f:
            f.write(GRID_MAGIC)
            f.write(header.tobytes())
            for axis in self.axes:
                f.write(np.asarray(axis, dtype="<f8").tobytes())
            f.write(np.ascontiguousarray(self.values, dtype="<f8").tobytes())
        logger.debug(f"💾 Сетка W записана: {path}")
        return path

    @classmethod
    def load_binary(cls, path: str) -> 'ValueGrid':
        with open(path, "rb") as f:
            raw = f.read()
        if raw[:len(GRID_MAGIC)] != GRID_MAGIC:
            raise ValueError(f"{path}: не файл сетки W")
        pos = len(GRID_MAGIC)
        n, m = np.frombuffer(raw, dtype="<u4", count=2, offset=pos).tolist()
        pos += 8
        sizes = np.frombuffer(raw, dtype="<u4", count=n + m + 2, offset=pos).tolist()
        pos += 4 * len(sizes)
        axes = []
        for size in sizes:
            axes.append(np.frombuffer(raw, dtype="<f8", count=size, offset=pos).copy())
            pos += 8 * size
        values = np.frombuffer(raw, dtype="<f8", count=int(np.prod(sizes)), offset=pos).reshape(sizes).copy()
        return cls(n, m, axes, values)

    def export_slice_csv(self, path: str, t_index: int = 0, k_index: int = 0) -> str:
        """Срез W(t_i, x, u, k_j) в длинном формате x..., u..., W"""
        mesh = np.meshgrid(*self.xu_axes, indexing="ij")
        columns = [axis.ravel() for axis in mesh]
        values = self.values[t_index, ..., k_index].ravel()
        header = self.names[1:-1] + ["W"]
        rows = (list(col[i] for col in columns) + [values[i]] for i in range(values.size))
        return write_csv(path, header, rows)


# ---------------------------------------------------------------------------
# Полулагранжева схема
# ---------------------------------------------------------------------------

def _clip_points(points: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> Tuple[np.ndarray, int]:
    outside = np.any((points < lo - _EDGE_TOL) | (points > hi + _EDGE_TOL), axis=1)
    return np.clip(points, lo, hi), int(np.count_nonzero(outside))


def _trace(rhs: Callable[[np.ndarray], np.ndarray], Z: np.ndarray, h: float,
           solver: str = "rk4", substeps: int = 1) -> np.ndarray:
    """Точка, в которую за время h приходят характеристики Z' = rhs(Z) (все строки сразу)"""
    if solver == "euler":
        return Z + h * rhs(Z)
    step = h / substeps
    for _ in range(substeps):
        k1 = rhs(Z)
        k2 = rhs(Z + 0.5 * step * k1)
        k3 = rhs(Z + 0.5 * step * k2)
        k4 = rhs(Z + step * k3)
        Z = Z + step / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return Z


def _relax(slice_values: np.ndarray, xu_axes: Sequence[np.ndarray], impulse_targets, tol_sweep: float,
           max_sweeps: int) -> Tuple[int, float]:
    """
    W(., j) <- min(W(., j), min_{a, sigma} W(X_a^sigma(du), j + 1)), где X_a^sigma - поток
    поля sigma (g_a, e_a) по (x, u). Слои k обходятся сверху вниз; повтор до изменения
    <= tol_sweep. После каждого прохода срез не должен вырасти ни в одном узле.
    Возвращает (число проходов, наибольший рост среза за проход).
    """
    grid_shape = tuple(a.size for a in xu_axes)
    nk = slice_values.shape[1]
    worst_increase = 0.0
    for sweep in range(1, max_sweeps + 1):
        before = slice_values.copy()
        change = 0.0
        for j in range(nk - 2, -1, -1):
            source = RegularGridInterpolator(tuple(xu_axes), slice_values[:, j + 1].reshape(grid_shape))
            current = slice_values[:, j]
            best = current.copy()
            for points, mask in impulse_targets:
                if not points.size:
                    continue
                best[mask] = np.minimum(best[mask], source(points))
            change = max(change, float(np.max(current - best)))
            slice_values[:, j] = best
        increase = float(np.max(slice_values - before)) if slice_values.size else 0.0
        worst_increase = max(worst_increase, increase)
        if increase > tol_sweep:
            raise SweepMonotonicityError(f"Проход {sweep}: срез W вырос на {increase:.3e}")
        if change <= tol_sweep:
            return sweep, worst_increase
    raise SweepNotConvergedError(f"Импульсная релаксация не сошлась за {max_sweeps} проходов")


def solve_w(problem: MayerProblem, K: float, spec: GridSpec, tol_sweep: Optional[float] = None) -> ValueGrid:
    """
    W(b, x, u, k) = psi(x, u); назад по времени:
        дрейф:  W(t_i) = min_v W(t_{i+1}, x + dt f(x, u, v), u, k)
        импульс: релаксация с шагом du по u и dk = du по k
    Терминальный срез тоже проходит релаксацию перед первым шагом дрейфа
    (скачок в b разрешен), но хранится как psi.
    """
    system = problem.system
    tol_sweep = config.tol_sweep if tol_sweep is None else tol_sweep
    if K < 0:
        raise ValueError("K должно быть >= 0")
    if len(spec.x_lo) != system.n:
        raise DimensionMismatchError(f"Бокс по x размерности {len(spec.x_lo)} вместо n={system.n}")

    u_lo, u_hi = _u_bounds(system, spec)
    x_axes = [np.linspace(lo, hi, spec.per_axis) for lo, hi in zip(spec.x_lo, spec.x_hi)]
    u_axes = [np.linspace(lo, hi, spec.per_axis) for lo, hi in zip(u_lo, u_hi)]
    xu_axes = x_axes + u_axes
    du = float(min(a[1] - a[0] for a in u_axes))
    nk = int(np.floor(K / du + 1e-9)) + 1
    k_axis = du * np.arange(nk)
    t_axis = np.linspace(problem.a, problem.b, spec.time_steps + 1)
    dt = float(t_axis[1] - t_axis[0])

    mesh = np.meshgrid(*xu_axes, indexing="ij")
    nodes = np.stack([a.ravel() for a in mesh], axis=-1)
    X, U = nodes[:, :system.n], nodes[:, system.n:]
    lo = np.array([a[0] for a in xu_axes])
    hi = np.array([a[-1] for a in xu_axes])
    clamped = 0

    n = system.n
    v_points = control_grid(system.V, system.l)
    drift_targets = []
    for v in v_points:
        Vv = np.broadcast_to(v, (X.shape[0], v.size)) if system.l else None
        # u и v заморожены на шаге дрейфа
        moved = _trace(lambda Y: system.f_batch(Y, U, Vv), X, dt, spec.characteristic_solver, spec.substeps)
        points, count = _clip_points(np.hstack([moved, U]), lo, hi)
        drift_targets.append(points)
        clamped += count

    impulse_targets = []
    for alpha in range(system.m):
        for sigma in (1.0, -1.0):
            shifted_u = U.copy()
            shifted_u[:, alpha] += sigma * du
            mask = (shifted_u[:, alpha] >= u_lo[alpha] - _EDGE_TOL) & (shifted_u[:, alpha] <= u_hi[alpha] + _EDGE_TOL)

            def impulse_field(Z, alpha=alpha, sigma=sigma):
                out = np.zeros_like(Z)
                out[:, :n] = sigma * system.g_batch(alpha, Z[:, :n], Z[:, n:])
                out[:, n + alpha] = sigma
                return out

            moved = _trace(impulse_field, nodes[mask], du, spec.characteristic_solver, spec.substeps)
            moved[:, n:] = shifted_u[mask]
            points, count = _clip_points(moved, lo, hi)
            impulse_targets.append((points, mask))
            clamped += count

    grid_shape = tuple(a.size for a in xu_axes)
    values = np.empty((t_axis.size,) + grid_shape + (nk,))
    terminal = problem.psi.batch(X, U)
    values[-1] = np.repeat(terminal[:, None], nk, axis=1).reshape(grid_shape + (nk,))

    logger.info(f"🚀 W_K: K={K:g}, сетка {grid_shape} x {nk} по k, {spec.time_steps} шагов по t")
    continuation = np.repeat(terminal[:, None], nk, axis=1)
    sweeps = [_relax(continuation, xu_axes, impulse_targets, tol_sweep, spec.max_sweeps)]
    for i in range(t_axis.size - 2, -1, -1):
        current = np.empty_like(continuation)
        for j in range(nk):
            source = RegularGridInterpolator(tuple(xu_axes), continuation[:, j].reshape(grid_shape))
            current[:, j] = np.min([source(points) for points in drift_targets], axis=0)
        sweeps.append(_relax(current, xu_axes, impulse_targets, tol_sweep, spec.max_sweeps))
        values[i] = current.reshape(grid_shape + (nk,))
        continuation = current
        logger.debug(f"Срез t={t_axis[i]:.4g}: {sweeps[-1][0]} проходов релаксации")

    grid = ValueGrid(system.n, system.m, [t_axis] + xu_axes + [k_axis], values)
    grid.diagnostics = {
        "K": float(K),
        "max_sweeps_used": int(max(s for s, _ in sweeps)),
        "max_sweep_increase": float(max(inc for _, inc in sweeps)),
        "characteristic_solver": spec.characteristic_solver,
        "clamped_points": clamped,
        "boundary_clamped": clamped > 0,
        "monotone_in_k": grid.is_monotone_in_k(),
        "spacing": grid.spacing,
    }
    if clamped:
        logger.warning(f"⚠️ {clamped} точек шага вышли за бокс сетки и прижаты к границе")
    return grid


# ---------------------------------------------------------------------------
# Сверка с прямой оптимизацией
# ---------------------------------------------------------------------------

@dataclass
class CrossValidationReport:
    K: float
    v_bv: float
    levels: List[Dict[str, float]]
    shrinking: bool
    tol: float
    grids: List[ValueGrid] = field(default_factory=list, repr=False)

    @property
    def final_difference(self) -> float:
        return self.levels[-1]["difference"]

    @property
    def passed(self) -> bool:
        return self.shrinking and self.final_difference <= self.tol

    def to_dict(self) -> Dict[str, Any]:
        return {
            "K": self.K,
            "v_bv": self.v_bv,
            "levels": self.levels,
            "shrinking": self.shrinking,
            "final_difference": self.final_difference,
            "tol": self.tol,
            "passed": self.passed,
        }


def crossvalidate_w(problem: MayerProblem, K: float, spec: GridSpec, budget: int,
                    seed: Optional[int] = None, levels: int = 3, tol: float = 5e-2,
                    threads: Optional[int] = None, pieces: Optional[int] = None) -> CrossValidationReport:
    """
    W_K(a, x_bar, u_bar, 0) на levels сетках (spec - самая мелкая, каждая
    следующая вдвое мельче предыдущей) против V_{BV_K} прямым поиском
    """
    param = ControlParameterization.for_problem(problem, "U_K", K, pieces)
    v_bv = estimate_value(problem, param, budget, seed, threads=threads).best_value

    rows, grids = [], []
    for level in range(levels - 1, -1, -1):
        level_spec = spec.coarsened(level)
        grid = solve_w(problem, K, level_spec)
        w = grid.value_at(problem.x_bar, problem.u_bar, 0.0)
        rows.append({
            "per_axis": float(level_spec.per_axis),
            "time_steps": float(level_spec.time_steps),
            "w_value": w,
            "difference": abs(w - v_bv),
        })
        grids.append(grid)
        logger.info(f"🔄 Сетка {level_spec.per_axis}: W = {w:.6g}, |W - V| = {rows[-1]['difference']:.3e}")

    shrinking = is_monotone_decreasing([r["difference"] for r in rows])
    report = CrossValidationReport(float(K), v_bv, rows, shrinking, tol, grids)
    if report.passed:
        logger.info(f"✅ W_K согласуется с V_BV_K: {report.final_difference:.3e}")
    else:
        logger.warning(f"⚠️ Сверка W_K: разница {report.final_difference:.3e}, убывание {shrinking}")
    return report
