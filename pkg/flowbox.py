"""
Flow-box координаты: phi(x, z) = (phi_pr(x, z), z),
phi_pr(x, z) = Pr exp(-z_a g_a)(x, z) - проекция потока за единичное время.

В этих координатах коммутирующие поля g_a становятся d/dz_a,
а снос f переходит в F(xi, zeta, v) с нулевыми последними m компонентами.
"""
import logging
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np
from scipy.integrate import solve_ivp

from config import config
from errors import FlowBoxViolationError, FlowEscapeError, IntegrationError
from sysmodel import BoxSet, ControlAffineSystem, finite_difference_jacobian, sample_box

logger = logging.getLogger(__name__)

VectorField = Callable[[np.ndarray], np.ndarray]

ESCAPE_FACTOR = 10.0
MIN_ESCAPE_RADIUS = 10.0


def escape_box_for(box: Optional[BoxSet]) -> Optional[BoxSet]:
    """10-кратный рабочий бокс (полуширина не меньше 10)"""
    if box is None:
        return None
    lo, hi = box.bounds()
    center = (lo + hi) / 2
    half = np.maximum(ESCAPE_FACTOR * (hi - lo) / 2, MIN_ESCAPE_RADIUS)
    return BoxSet(tuple(center - half), tuple(center + half))


def _guarded(rhs: Callable[[float, np.ndarray], np.ndarray]) -> Callable[[float, np.ndarray], np.ndarray]:
    def wrapped(s, q):
        value = rhs(s, q)
        if not np.all(np.isfinite(value)):
            raise FlowEscapeError(f"Нечисловая правая часть при s={s:.6g}")
        return value
    return wrapped


def integrate(rhs: Callable[[float, np.ndarray], np.ndarray], t_span: Tuple[float, float], y0: np.ndarray,
              tol: float, escape_box: Optional[BoxSet] = None, t_eval=None, dense: bool = False):
    """
    Общий вызов solve_ivp (DOP853) с защитой от ухода из бокса и nan
    """
    events = None
    if escape_box is not None:
        lo, hi = escape_box.bounds()
        n_box = lo.size

        def escape(s, q):
            head = q[:n_box]
            return min(float(np.min(head - lo)), float(np.min(hi - head)))

        escape.terminal = True
        escape.direction = -1
        events = [escape]

    sol = solve_ivp(_guarded(rhs), t_span, np.asarray(y0, dtype=float), method="DOP853",
                    rtol=tol, atol=tol, events=events, t_eval=t_eval, dense_output=dense)
    if sol.status == -1:
        raise IntegrationError(f"Интегратор остановился: {sol.message}")
    if sol.status == 1:
        raise FlowEscapeError(f"Траектория покинула рабочий бокс при t={sol.t[-1]:.6g}")
    if not np.all(np.isfinite(sol.y)):
        raise FlowEscapeError("Нечисловое состояние траектории")
    return sol


def exp_flow(field: VectorField, t: float, p, ode_tol: Optional[float] = None,
             escape_box: Optional[BoxSet] = None) -> np.ndarray:
    """exp(t * field)(p) адаптивным Рунге-Кутта 8(5,3)"""
    p = np.asarray(p, dtype=float)
    if t == 0:
        return p.copy()
    tol = config.ode_tol if ode_tol is None else ode_tol
    sol = integrate(lambda s, q: field(q), (0.0, float(t)), p, tol, escape_box)
    return sol.y[:, -1]


@dataclass(frozen=True, eq=False)
class FlowBoxChart:
    """
    Карта phi для системы с коммутирующими полями g_a.
    Неизменяема, все методы чистые.
    """
    system: ControlAffineSystem
    box: Optional[BoxSet] = None
    ode_tol: Optional[float] = None
    jac_mode: Optional[str] = None
    tol_push: Optional[float] = None
    h_jac: Optional[float] = None

    def __post_init__(self):
        # Параметры None берутся из глобального конфига в момент создания
        object.__setattr__(self, "ode_tol", config.ode_tol if self.ode_tol is None else self.ode_tol)
        object.__setattr__(self, "tol_push", config.tol_push if self.tol_push is None else self.tol_push)
        object.__setattr__(self, "h_jac", config.h_jac if self.h_jac is None else self.h_jac)
        mode = config.jac_mode if self.jac_mode is None else self.jac_mode
        if mode == "analytic":
            mode = "variational"
        if mode not in ("finite-difference", "variational"):
            raise ValueError(f"Неизвестный jac_mode: {mode}")
        object.__setattr__(self, "jac_mode", mode)
        if self.box is not None and self.box.dim != self.dim:
            raise ValueError(f"Рабочий бокс размерности {self.box.dim} вместо n+m={self.dim}")

    @property
    def n(self) -> int:
        return self.system.n

    @property
    def m(self) -> int:
        return self.system.m

    @property
    def dim(self) -> int:
        return self.system.n + self.system.m

    @property
    def escape_box(self) -> Optional[BoxSet]:
        return escape_box_for(self.box)

    def with_tolerance(self, ode_tol: float) -> 'FlowBoxChart':
        return FlowBoxChart(self.system, self.box, ode_tol, self.jac_mode, self.tol_push, self.h_jac)

    # --- поток -sum z_b g_b с замороженными коэффициентами ---

    def _coefficient_field(self, coeffs: np.ndarray) -> VectorField:
        active = [(beta, c) for beta, c in enumerate(coeffs) if c != 0.0]

        def field(q):
            out = np.zeros(self.dim)
            for beta, c in active:
                out -= c * self.system.g_ext(beta, q)
            return out

        return field

    def _flow_tol(self) -> float:
        # Разностному якобиану нужен более точный поток, чем сам шаг h
        if self.jac_mode == "finite-difference":
            return max(self.ode_tol * 1e-2, 1e-13)
        return self.ode_tol

    def phi_pr(self, x, z, tol: Optional[float] = None) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        z = np.asarray(z, dtype=float)
        if not np.any(z):
            return x.copy()
        p = np.concatenate([x, z])
        end = exp_flow(self._coefficient_field(z), 1.0, p, tol or self.ode_tol, self.escape_box)
        return end[:self.n]

    def phi(self, x, z) -> Tuple[np.ndarray, np.ndarray]:
        z = np.array(z, dtype=float)
        return self.phi_pr(x, z), z

    def phi_inverse(self, xi, zeta) -> Tuple[np.ndarray, np.ndarray]:
        zeta = np.array(zeta, dtype=float)
        return self.phi_pr(xi, -zeta), zeta

    # --- производные ---

    def _variational_flow(self, p: np.ndarray, directions: np.ndarray) -> np.ndarray:
        """
        Производная phi_pr вдоль столбцов directions ((n+m) x k)
        через уравнение в вариациях.
        """
        n, dim = self.n, self.dim
        z = p[n:]
        k = directions.shape[1]
        active = [beta for beta in range(self.m) if z[beta] != 0.0 or np.any(directions[n + beta])]

        def rhs(s, state):
            q = state[:dim]
            W = state[dim:].reshape(dim, k)
            dq = np.zeros(dim)
            dW = np.zeros((dim, k))
            for beta in active:
                g = self.system.g_ext(beta, q)
                dq -= z[beta] * g
                dW -= z[beta] * (self.system.jac_g_ext(beta, q) @ W)
                dW -= np.outer(g, directions[n + beta])
            return np.concatenate([dq, dW.ravel()])

        y0 = np.concatenate([p, directions.ravel()])
        sol = integrate(rhs, (0.0, 1.0), y0, self.ode_tol, self.escape_box)
        return sol.y[dim:, -1].reshape(dim, k)[:n]

    def _jvp(self, x, z, direction) -> np.ndarray:
        """D phi_pr(x, z) . direction"""
        p = np.concatenate([np.asarray(x, dtype=float), np.asarray(z, dtype=float)])
        d = np.asarray(direction, dtype=float)
        if not np.any(d):
            return np.zeros(self.n)
        if self.jac_mode == "variational":
            return self._variational_flow(p, d[:, None])[:, 0]
        scale = float(np.linalg.norm(d))
        h = self.h_jac * (1.0 + float(np.linalg.norm(p))) / scale
        tol = self._flow_tol()
        plus = self.phi_pr((p + h * d)[:self.n], (p + h * d)[self.n:], tol)
        minus = self.phi_pr((p - h * d)[:self.n], (p - h * d)[self.n:], tol)
        return (plus - minus) / (2.0 * h)

    def jacobian(self, x, z) -> np.ndarray:
        """Полный D phi в точке (x, z): [[D phi_pr], [0 I]]"""
        p = np.concatenate([np.asarray(x, dtype=float), np.asarray(z, dtype=float)])
        if self.jac_mode == "variational":
            top = self._variational_flow(p, np.eye(self.dim))
        else:
            tol = self._flow_tol()
            top = finite_difference_jacobian(lambda q: self.phi_pr(q[:self.n], q[self.n:], tol), p, self.h_jac)
        bottom = np.hstack([np.zeros((self.m, self.n)), np.eye(self.m)])
        return np.vstack([top, bottom])

    # --- push-forward ---

    def pushforward_drift(self, xi, zeta, v=()) -> np.ndarray:
        """
        F(xi, zeta, v): образ сноса f в flow-box координатах (первые n компонент)
        """
        x, z = self.phi_inverse(xi, zeta)
        drift = self.system.f_ext(np.concatenate([x, z]), v)
        full = np.concatenate([self._jvp(x, z, drift), drift[self.n:]])
        tail = float(np.max(np.abs(full[self.n:]))) if self.m else 0.0
        if tail > self.tol_push:
            raise FlowBoxViolationError(f"Последние m компонент F не нулевые: {tail:.3e}")
        return full[:self.n]

    def pushforward_impulse(self, xi, zeta, alpha: int, strict: bool = False) -> np.ndarray:
        """
        D phi . g_a в точке phi^{-1}(xi, zeta); для коммутирующих полей это e_{n+a}
        """
        x, z = self.phi_inverse(xi, zeta)
        g = self.system.g_ext(alpha, np.concatenate([x, z]))
        result = np.concatenate([self._jvp(x, z, g), g[self.n:]])
        if strict:
            target = np.zeros(self.dim)
            target[self.n + alpha] = 1.0
            deviation = float(np.linalg.norm(result - target))
            if deviation > self.tol_push:
                raise FlowBoxViolationError(
                    f"D phi . g{alpha + 1} отличается от e_(n+{alpha + 1}) на {deviation:.3e}"
                )
        return result

    def flowbox_deviation(self, xi, zeta) -> float:
        """max_a |D phi . g_a - e_{n+a}|"""
        worst = 0.0
        for alpha in range(self.m):
            target = np.zeros(self.dim)
            target[self.n + alpha] = 1.0
            worst = max(worst, float(np.linalg.norm(self.pushforward_impulse(xi, zeta, alpha) - target)))
        return worst


def estimate_dphi_bound(chart: FlowBoxChart, box: BoxSet, n_samples: int = 64, seed: int = 0) -> float:
    """
    Эмпирическая оценка sup |D phi| (спектральная норма) по точкам бокса
    """
    bound = 0.0
    failures = 0
    for p in sample_box(box, n_samples, seed):
        try:
            jac = chart.jacobian(p[:chart.n], p[chart.n:])
        except (FlowEscapeError, IntegrationError) as e:
            failures += 1
            logger.debug(f"Пропуск точки {p}: {e}")
            continue
        bound = max(bound, float(np.linalg.norm(jac, 2)))
    if failures:
        logger.warning(f"⚠️ Оценка |D phi|: пропущено {failures} точек из {n_samples}")
    logger.info(f"📊 sup |D phi| ~ {bound:.4g} по {n_samples - failures} точкам")
    return bound
