"""
Модель управляемо-аффинной импульсной системы

    x' = f(x, u, v) + sum_a g_a(x, u) u_a'

Парсит DSL описание полей, строит расширенные поля на R^{n+m}
и численно проверяет стандартные гипотезы (коммутативность, рост).
"""
import ast
import logging
import re
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import sympy as sp
from scipy.optimize import linprog
from scipy.stats import qmc
from sympy.core.function import AppliedUndef
from sympy.parsing import sympy_parser
from sympy.printing.str import StrPrinter

from config import config
from errors import (
    DimensionMismatchError,
    DslSyntaxError,
    ImpulseDomainError,
    JacobianEvaluationError,
    UnknownIdentifierError,
)

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Множества U и V
# ---------------------------------------------------------------------------

def _as_tuple(values) -> Tuple[float, ...]:
    return tuple(float(v) for v in np.atleast_1d(np.asarray(values, dtype=float)))


@dataclass(frozen=True)
class BoxSet:
    """Бокс [lo, hi] в R^d"""
    lo: Tuple[float, ...]
    hi: Tuple[float, ...]

    kind = "box"

    def __post_init__(self):
        if len(self.lo) != len(self.hi):
            raise DimensionMismatchError("Границы бокса разной длины")
        if any(l > h for l, h in zip(self.lo, self.hi)):
            raise ImpulseDomainError(f"Пустой бокс: lo={self.lo}, hi={self.hi}")

    @classmethod
    def from_bounds(cls, lo, hi, dim: Optional[int] = None) -> 'BoxSet':
        lo_t, hi_t = _as_tuple(lo), _as_tuple(hi)
        if dim is not None:
            if len(lo_t) == 1:
                lo_t = lo_t * dim
            if len(hi_t) == 1:
                hi_t = hi_t * dim
        return cls(lo_t, hi_t)

    @property
    def dim(self) -> int:
        return len(self.lo)

    @property
    def is_convex(self) -> bool:
        return True

    @property
    def is_compact(self) -> bool:
        return all(np.isfinite(self.lo)) and all(np.isfinite(self.hi))

    def bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        return np.array(self.lo), np.array(self.hi)

    def contains(self, p, tol: float = 1e-12) -> bool:
        p = np.asarray(p, dtype=float)
        lo, hi = self.bounds()
        return bool(np.all(p >= lo - tol) and np.all(p <= hi + tol))

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        lo, hi = self.bounds()
        return lo + (hi - lo) * rng.random((count, self.dim))

    def from_unit(self, theta) -> np.ndarray:
        """Отображает точку единичного куба в бокс"""
        lo, hi = self.bounds()
        return lo + (hi - lo) * np.clip(theta, 0.0, 1.0)

    def grid(self, per_axis: int) -> np.ndarray:
        lo, hi = self.bounds()
        axes = [np.linspace(l, h, per_axis) if h > l else np.array([l]) for l, h in zip(lo, hi)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def scaled(self, factor: float) -> 'BoxSet':
        lo, hi = self.bounds()
        center, half = (lo + hi) / 2, (hi - lo) / 2
        return BoxSet(_as_tuple(center - factor * half), _as_tuple(center + factor * half))

    def describe(self) -> str:
        return f"box({_format_vector(self.lo)}, {_format_vector(self.hi)})"


@dataclass(frozen=True)
class PolytopeSet:
    """Выпуклый многогранник {p : A p <= b}"""
    A: Tuple[Tuple[float, ...], ...]
    b: Tuple[float, ...]

    kind = "polytope"

    def __post_init__(self):
        if len(self.A) != len(self.b) or len({len(row) for row in self.A}) != 1:
            raise DimensionMismatchError("Многогранник: размеры A и b не согласованы")

    @property
    def dim(self) -> int:
        return len(self.A[0])

    @property
    def is_convex(self) -> bool:
        return True

    @cached_property
    def _bounding_box(self) -> Tuple[np.ndarray, np.ndarray]:
        # Ограничивающий бокс через 2d линейных программ
        A, b = np.array(self.A), np.array(self.b)
        lo, hi = np.full(self.dim, -np.inf), np.full(self.dim, np.inf)
        for i in range(self.dim):
            c = np.zeros(self.dim)
            c[i] = 1.0
            for sign, target in ((1.0, lo), (-1.0, hi)):
                res = linprog(sign * c, A_ub=A, b_ub=b, bounds=[(None, None)] * self.dim)
                if res.status == 2:
                    raise ImpulseDomainError("Многогранник U пуст")
                if res.status == 0:
                    target[i] = res.x[i]
        return lo, hi

    @property
    def is_compact(self) -> bool:
        lo, hi = self._bounding_box
        return bool(np.all(np.isfinite(lo)) and np.all(np.isfinite(hi)))

    def bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        lo, hi = self._bounding_box
        radius = config.sample_radius
        return np.where(np.isfinite(lo), lo, -radius), np.where(np.isfinite(hi), hi, radius)

    def contains(self, p, tol: float = 1e-12) -> bool:
        return bool(np.all(np.array(self.A) @ np.asarray(p, dtype=float) <= np.array(self.b) + tol))

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        lo, hi = self.bounds()
        points: List[np.ndarray] = []
        attempts = 0
        while len(points) < count:
            attempts += 1
            if attempts > 1000 * count:
                raise ImpulseDomainError("Не удалось сэмплировать многогранник U")
            candidate = lo + (hi - lo) * rng.random(self.dim)
            if self.contains(candidate):
                points.append(candidate)
        return np.array(points)

    def describe(self) -> str:
        rows = ", ".join(_format_vector(row) for row in self.A)
        return f"polytope(({rows},), {_format_vector(self.b)})"


@dataclass(frozen=True)
class FullSpace:
    """Все R^d"""
    dimension: int

    kind = "full"

    @property
    def dim(self) -> int:
        return self.dimension

    @property
    def is_convex(self) -> bool:
        return True

    @property
    def is_compact(self) -> bool:
        return False

    def bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        radius = config.sample_radius
        return np.full(self.dim, -radius), np.full(self.dim, radius)

    def contains(self, p, tol: float = 1e-12) -> bool:
        return bool(np.all(np.isfinite(p)))

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        lo, hi = self.bounds()
        return lo + (hi - lo) * rng.random((count, self.dim))

    def describe(self) -> str:
        return "full"


@dataclass(frozen=True)
class FiniteSet:
    """Конечное множество точек (только для V)"""
    points: Tuple[Tuple[float, ...], ...]

    kind = "set"

    def __post_init__(self):
        if not self.points:
            raise DimensionMismatchError("Пустое множество V")
        if len({len(p) for p in self.points}) != 1:
            raise DimensionMismatchError("Точки множества V разной размерности")

    @property
    def dim(self) -> int:
        return len(self.points[0])

    @property
    def is_convex(self) -> bool:
        return len(set(self.points)) == 1

    @property
    def is_compact(self) -> bool:
        return True

    def bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        arr = np.array(self.points)
        return arr.min(axis=0), arr.max(axis=0)

    def contains(self, p, tol: float = 1e-12) -> bool:
        arr = np.array(self.points)
        return bool(np.any(np.all(np.abs(arr - np.asarray(p, dtype=float)) <= tol, axis=1)))

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        idx = rng.integers(0, len(self.points), size=count)
        return np.array(self.points)[idx]

    def from_unit(self, theta) -> np.ndarray:
        """Индекс точки по координате единичного отрезка"""
        t = float(np.clip(np.atleast_1d(theta)[0], 0.0, 1.0))
        idx = min(int(t * len(self.points)), len(self.points) - 1)
        return np.array(self.points[idx])

    def grid(self, per_axis: int) -> np.ndarray:
        return np.array(self.points)

    def describe(self) -> str:
        return "set{" + ", ".join(_format_vector(p) for p in self.points) + "}"


ImpulseDomain = Union[BoxSet, PolytopeSet, FullSpace]
OrdinarySet = Union[BoxSet, FiniteSet]


def control_grid(V: Optional[OrdinarySet], l: int, per_axis: Optional[int] = None) -> np.ndarray:
    """Конечная сетка точек V; при l = 0 одна пустая точка"""
    if l == 0 or V is None:
        return np.zeros((1, 0))
    return V.grid(per_axis or config.n_v)


def _format_vector(values: Sequence[float]) -> str:
    if len(values) == 1:
        return repr(float(values[0]))
    return "(" + ", ".join(repr(float(v)) for v in values) + ")"


# ---------------------------------------------------------------------------
# Выражения
# ---------------------------------------------------------------------------

_FUNCTIONS = {
    "exp": sp.exp,
    "log": sp.log,
    "sin": sp.sin,
    "cos": sp.cos,
    "tanh": sp.tanh,
    "abs": sp.Abs,
    "pi": sp.pi,
    "e": sp.E,
}

# Минимальный глобальный словарь: без него parse_expr видит весь sympy
_GLOBALS = {
    "Symbol": sp.Symbol,
    "Function": sp.Function,
    "Integer": sp.Integer,
    "Float": sp.Float,
    "Rational": sp.Rational,
}

_TRANSFORMATIONS = sympy_parser.standard_transformations + (sympy_parser.convert_xor,)


def make_symbols(n: int, m: int, l: int) -> Tuple[List[sp.Symbol], List[sp.Symbol], List[sp.Symbol]]:
    xs = [sp.Symbol(f"x{i + 1}", real=True) for i in range(n)]
    us = [sp.Symbol(f"u{i + 1}", real=True) for i in range(m)]
    vs = [sp.Symbol(f"v{i + 1}", real=True) for i in range(l)]
    return xs, us, vs


def parse_expression(text: str, allowed: Sequence[sp.Symbol],
                     line: int = 1, column: int = 1) -> sp.Expr:
    """
    Разбирает скалярное выражение DSL с защитой от неизвестных имен
    """
    local_dict = dict(_FUNCTIONS)
    local_dict.update({s.name: s for s in allowed})

    try:
        expr = sympy_parser.parse_expr(
            text,
            local_dict=local_dict,
            global_dict=dict(_GLOBALS),
            transformations=_TRANSFORMATIONS,
        )
    except (SyntaxError, sympy_parser.TokenError) as e:
        offset = getattr(e, "offset", None) or 1
        if offset > len(text):
            offset = 1
        raise DslSyntaxError(f"Не удалось разобрать выражение '{text}'", line, column + offset - 1) from e
    except (TypeError, ValueError, AttributeError) as e:
        raise DslSyntaxError(f"Некорректное выражение '{text}': {e}", line, column) from e

    if not isinstance(expr, sp.Expr):
        raise DslSyntaxError(f"Выражение '{text}' не скалярное", line, column)

    allowed_names = {s.name for s in allowed}
    for undefined in expr.atoms(AppliedUndef):
        raise UnknownIdentifierError(str(undefined.func), line)
    for sym in expr.free_symbols:
        if sym.name not in allowed_names:
            raise UnknownIdentifierError(sym.name, line)

    return expr


def _split_top_level(text: str) -> List[Tuple[str, int]]:
    """Делит текст по запятым верхнего уровня, возвращает (кусок, смещение)"""
    parts, depth, start = [], 0, 0
    for i, ch in enumerate(text):
        if ch in "([{":
            depth += 1
        elif ch in ")]}":
            depth -= 1
        elif ch == "," and depth == 0:
            parts.append((text[start:i], start))
            start = i + 1
    parts.append((text[start:], start))
    return parts


def _matching_paren(text: str, open_index: int) -> int:
    depth = 0
    for i in range(open_index, len(text)):
        if text[i] == "(":
            depth += 1
        elif text[i] == ")":
            depth -= 1
            if depth == 0:
                return i
    return -1


def parse_vector(text: str, allowed: Sequence[sp.Symbol], line: int, column: int) -> List[sp.Expr]:
    """'(e1, e2, ...)' или одиночное выражение"""
    stripped = text.strip()
    lead = len(text) - len(text.lstrip())
    if stripped.startswith("(") and _matching_paren(stripped, 0) == len(stripped) - 1:
        inner = stripped[1:-1]
        pieces = _split_top_level(inner)
        base = column + lead + 1
    else:
        pieces = [(stripped, 0)]
        base = column + lead

    exprs = []
    for piece, offset in pieces:
        if not piece.strip():
            raise DslSyntaxError("Пустая компонента вектора", line, base + offset)
        inner_lead = len(piece) - len(piece.lstrip())
        exprs.append(parse_expression(piece.strip(), allowed, line, base + offset + inner_lead))
    return exprs


class DslPrinter(StrPrinter):
    """Печать выражений в синтаксисе DSL"""

    def _print_Abs(self, expr):
        return f"abs({self._print(expr.args[0])})"

    def _print_Exp1(self, expr):
        return "e"

    def _print_Pow(self, expr, rational=False):
        return super()._print_Pow(expr, rational).replace("**", "^")


def format_expression(expr: sp.Expr) -> str:
    return DslPrinter({"full_prec": True}).doprint(expr)


# ---------------------------------------------------------------------------
# Система
# ---------------------------------------------------------------------------

def finite_difference_jacobian(func: Callable[[np.ndarray], np.ndarray], p: np.ndarray,
                               h_rel: Optional[float] = None) -> np.ndarray:
    """Центральные разности со относительным шагом h_rel * (1 + |p_i|)"""
    h_rel = config.h_jac if h_rel is None else h_rel
    p = np.asarray(p, dtype=float)
    columns = []
    for i in range(p.size):
        h = h_rel * (1.0 + abs(p[i]))
        dp = np.zeros_like(p)
        dp[i] = h
        columns.append((np.asarray(func(p + dp)) - np.asarray(func(p - dp))) / (2.0 * h))
    jac = np.stack(columns, axis=-1)
    if not np.all(np.isfinite(jac)):
        raise JacobianEvaluationError(f"Нечисловой якобиан в точке {p}")
    return jac


def _broadcast_stack(values: Sequence, shape: Tuple[int, ...]) -> np.ndarray:
    return np.stack([np.broadcast_to(np.asarray(v, dtype=float), shape) for v in values], axis=-1)


@dataclass(frozen=True, eq=False)
class ControlAffineSystem:
    """
    Система x' = f(x,u,v) + g_a(x,u) u_a'. Неизменяема после создания.
    Индексы полей g с нуля: g_tilde(0, ...) это g1 из DSL.
    """
    n: int
    m: int
    l: int
    f_exprs: Tuple[sp.Expr, ...]
    g_exprs: Tuple[Tuple[sp.Expr, ...], ...]
    U: ImpulseDomain
    V: Optional[OrdinarySet] = None
    analytic_jacobians: bool = True
    h_jac: Optional[float] = None

    _compiled: Dict[str, Callable] = field(init=False, repr=False, default_factory=dict)

    def __post_init__(self):
        if self.n < 1 or self.m < 1 or self.l < 0:
            raise DimensionMismatchError(f"Нужно n >= 1, m >= 1, l >= 0: n={self.n}, m={self.m}, l={self.l}")
        if len(self.f_exprs) != self.n:
            raise DimensionMismatchError(f"f возвращает {len(self.f_exprs)} компонент вместо n={self.n}")
        if len(self.g_exprs) != self.m:
            raise DimensionMismatchError(f"Задано {len(self.g_exprs)} полей g вместо m={self.m}")
        for alpha, g in enumerate(self.g_exprs):
            if len(g) != self.n:
                raise DimensionMismatchError(f"g{alpha + 1} возвращает {len(g)} компонент вместо n={self.n}")
        if self.U.dim != self.m:
            raise DimensionMismatchError(f"U имеет размерность {self.U.dim} вместо m={self.m}")
        if self.U.kind not in ("box", "polytope", "full"):
            raise ImpulseDomainError(f"U = {self.U.kind} не является допустимым impulse domain")
        if self.l > 0:
            if self.V is None:
                raise DimensionMismatchError("При l > 0 нужно задать V")
            if self.V.dim != self.l:
                raise DimensionMismatchError(f"V имеет размерность {self.V.dim} вместо l={self.l}")

        xs, us, vs = make_symbols(self.n, self.m, self.l)
        args = xs + us + vs
        compiled = self._compiled
        compiled["f"] = sp.lambdify(args, list(self.f_exprs), modules="numpy")
        compiled["g"] = [sp.lambdify(xs + us, list(g), modules="numpy") for g in self.g_exprs]
        if self.analytic_jacobians:
            zu = xs + us
            f_mat = sp.Matrix(self.f_exprs)
            compiled["jf"] = sp.lambdify(args, f_mat.jacobian(zu).tolist(), modules="numpy")
            compiled["jg"] = [
                sp.lambdify(zu, sp.Matrix(g).jacobian(zu).tolist(), modules="numpy")
                for g in self.g_exprs
            ]

    # --- символы ---

    @property
    def symbols(self) -> Tuple[List[sp.Symbol], List[sp.Symbol], List[sp.Symbol]]:
        return make_symbols(self.n, self.m, self.l)

    @property
    def depends_on_v(self) -> bool:
        _, _, vs = self.symbols
        return any(expr.has(*vs) for expr in self.f_exprs) if vs else False

    # --- поля в исходных координатах ---

    def f_tilde(self, x, u, v=()) -> np.ndarray:
        return np.array(self._compiled["f"](*x, *u, *np.atleast_1d(v)[:self.l]), dtype=float)

    def g_tilde(self, alpha: int, x, u) -> np.ndarray:
        return np.array(self._compiled["g"][alpha](*x, *u), dtype=float)

    def g_matrix(self, x, u) -> np.ndarray:
        """Матрица n x m со столбцами g_a"""
        return np.stack([self.g_tilde(a, x, u) for a in range(self.m)], axis=-1)

    def f_batch(self, X: np.ndarray, U: np.ndarray, Vv: Optional[np.ndarray] = None) -> np.ndarray:
        """Векторизованная f по строкам X (N,n), U (N,m), V (N,l)"""
        shape = (X.shape[0],)
        cols = [X[:, i] for i in range(self.n)] + [U[:, i] for i in range(self.m)]
        if self.l:
            cols += [Vv[:, i] for i in range(self.l)]
        return _broadcast_stack(self._compiled["f"](*cols), shape)

    def g_batch(self, alpha: int, X: np.ndarray, U: np.ndarray) -> np.ndarray:
        shape = (X.shape[0],)
        cols = [X[:, i] for i in range(self.n)] + [U[:, i] for i in range(self.m)]
        return _broadcast_stack(self._compiled["g"][alpha](*cols), shape)

    # --- расширенные поля на R^{n+m} ---

    def split(self, p) -> Tuple[np.ndarray, np.ndarray]:
        p = np.asarray(p, dtype=float)
        return p[:self.n], p[self.n:]

    def f_ext(self, p, v=()) -> np.ndarray:
        x, z = self.split(p)
        return np.concatenate([self.f_tilde(x, z, v), np.zeros(self.m)])

    def g_ext(self, alpha: int, p) -> np.ndarray:
        x, z = self.split(p)
        unit = np.zeros(self.m)
        unit[alpha] = 1.0
        return np.concatenate([self.g_tilde(alpha, x, z), unit])

    def jac_g_ext(self, alpha: int, p) -> np.ndarray:
        """D g_a на R^{n+m}; нижние m строк нулевые"""
        p = np.asarray(p, dtype=float)
        if self.analytic_jacobians:
            top = np.array(self._compiled["jg"][alpha](*p), dtype=float).reshape(self.n, self.n + self.m)
            if not np.all(np.isfinite(top)):
                raise JacobianEvaluationError(f"Нечисловой якобиан g{alpha + 1} в точке {p}")
        else:
            top = finite_difference_jacobian(lambda q: self.g_tilde(alpha, *self.split(q)), p, self.h_jac)
        return np.vstack([top, np.zeros((self.m, self.n + self.m))])

    def jac_f_ext(self, p, v=()) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        if self.analytic_jacobians:
            top = np.array(self._compiled["jf"](*p, *np.atleast_1d(v)[:self.l]), dtype=float)
            top = top.reshape(self.n, self.n + self.m)
            if not np.all(np.isfinite(top)):
                raise JacobianEvaluationError(f"Нечисловой якобиан f в точке {p}")
        else:
            top = finite_difference_jacobian(lambda q: self.f_tilde(*self.split(q), v), p, self.h_jac)
        return np.vstack([top, np.zeros((self.m, self.n + self.m))])

    def with_finite_differences(self) -> 'ControlAffineSystem':
        """Та же система, но якобианы центральными разностями"""
        return ControlAffineSystem(self.n, self.m, self.l, self.f_exprs, self.g_exprs,
                                   self.U, self.V, analytic_jacobians=False, h_jac=self.h_jac)


# ---------------------------------------------------------------------------
# DSL
# ---------------------------------------------------------------------------

_STATEMENT_RE = re.compile(r"^\s*([A-Za-z_][A-Za-z0-9_]*)\s*=(.*)$", re.S)
_FIELD_RE = re.compile(r"^g([0-9]+)$")
_DESCRIPTOR_RE = re.compile(r"^\s*(box|polytope|full|set)\s*(.*)$", re.S)


@dataclass
class _Statement:
    key: str
    value: str
    line: int
    column: int     # столбец начала значения


def _statements(source: str) -> List[_Statement]:
    result = []
    for line_no, raw_line in enumerate(source.splitlines(), start=1):
        line = raw_line.split("#", 1)[0]
        position = 0
        for chunk in line.split(";"):
            chunk_start = position
            position += len(chunk) + 1
            if not chunk.strip():
                continue
            match = _STATEMENT_RE.match(chunk)
            if not match:
                lead = len(chunk) - len(chunk.lstrip())
                raise DslSyntaxError(f"Ожидалось 'имя = значение', получено '{chunk.strip()}'",
                                     line_no, chunk_start + lead + 1)
            value_offset = match.start(2)
            result.append(_Statement(match.group(1), match.group(2), line_no,
                                     chunk_start + value_offset + 1))
    return result


def _literal(text: str, stmt: _Statement):
    try:
        return ast.literal_eval(text.strip())
    except (ValueError, SyntaxError) as e:
        raise DslSyntaxError(f"Ожидались числа, получено '{text.strip()}'", stmt.line, stmt.column) from e


def _parse_descriptor(stmt: _Statement, dim: int, for_u: bool) -> Union[ImpulseDomain, OrdinarySet]:
    match = _DESCRIPTOR_RE.match(stmt.value)
    if not match:
        raise DslSyntaxError(f"Неизвестный дескриптор множества '{stmt.value.strip()}'",
                             stmt.line, stmt.column)
    kind, rest = match.group(1), match.group(2).strip()

    if kind == "full":
        if rest not in ("", "()"):
            raise DslSyntaxError("full не принимает аргументов", stmt.line, stmt.column)
        if not for_u:
            raise DslSyntaxError("V должно быть компактным: box или set", stmt.line, stmt.column)
        return FullSpace(dim)

    if kind == "set":
        if for_u:
            raise ImpulseDomainError("U = set{...} не является impulse domain (нужен box, polytope или full)")
        if not (rest.startswith("{") and rest.endswith("}")):
            raise DslSyntaxError("Ожидалось set{...}", stmt.line, stmt.column)
        items = _literal("[" + rest[1:-1] + "]", stmt)
        points = tuple(_as_tuple(p) for p in items)
        return FiniteSet(points)

    args = _literal(rest, stmt)
    if not isinstance(args, tuple) or len(args) != 2:
        raise DslSyntaxError(f"{kind} ожидает два аргумента", stmt.line, stmt.column)
    if kind == "box":
        return BoxSet.from_bounds(args[0], args[1], dim)
    if not for_u:
        raise DslSyntaxError("V должно быть box или set", stmt.line, stmt.column)
    A = tuple(_as_tuple(row) for row in (args[0] if isinstance(args[0][0], (tuple, list)) else (args[0],)))
    return PolytopeSet(A, _as_tuple(args[1]))


def parse_system(source: str, analytic_jacobians: bool = True) -> ControlAffineSystem:
    """
    Разбирает DSL описание системы:

        n=1;m=1;l=1
        f = x1*v1
        g1 = x1
        U = box(-1, 1)
        V = set{0, 1}
    """
    statements = _statements(source)
    header: Dict[str, int] = {}
    for stmt in statements:
        if stmt.key in ("n", "m", "l"):
            value = _literal(stmt.value, stmt)
            if not isinstance(value, int) or isinstance(value, bool):
                raise DslSyntaxError(f"{stmt.key} должно быть целым", stmt.line, stmt.column)
            header[stmt.key] = value
    if "n" not in header or "m" not in header:
        raise DimensionMismatchError("В заголовке нужны n и m")
    n, m, l = header["n"], header["m"], header.get("l", 0)
    if n < 1 or m < 1 or l < 0:
        raise DimensionMismatchError(f"Нужно n >= 1, m >= 1, l >= 0: n={n}, m={m}, l={l}")

    xs, us, vs = make_symbols(n, m, l)
    f_exprs: Optional[List[sp.Expr]] = None
    g_exprs: Dict[int, List[sp.Expr]] = {}
    U: ImpulseDomain = FullSpace(m)
    V: Optional[OrdinarySet] = None

    for stmt in statements:
        key = stmt.key
        if key in ("n", "m", "l"):
            continue
        if key == "f":
            f_exprs = parse_vector(stmt.value, xs + us + vs, stmt.line, stmt.column)
            if len(f_exprs) == 1 and n > 1 and f_exprs[0] == 0:
                f_exprs = [sp.Integer(0)] * n
            if len(f_exprs) != n:
                raise DimensionMismatchError(f"f возвращает {len(f_exprs)} компонент вместо n={n}")
        elif _FIELD_RE.match(key):
            alpha = int(_FIELD_RE.match(key).group(1))
            if not 1 <= alpha <= m:
                raise DimensionMismatchError(f"Поле {key} вне диапазона g1..g{m}")
            exprs = parse_vector(stmt.value, xs + us, stmt.line, stmt.column)
            if len(exprs) != n:
                raise DimensionMismatchError(f"{key} возвращает {len(exprs)} компонент вместо n={n}")
            g_exprs[alpha - 1] = exprs
        elif key == "U":
            U = _parse_descriptor(stmt, m, for_u=True)
        elif key == "V":
            if l == 0:
                raise DimensionMismatchError("V задано, но l = 0")
            V = _parse_descriptor(stmt, l, for_u=False)
        else:
            raise UnknownIdentifierError(key, stmt.line)

    if f_exprs is None:
        logger.warning("⚠️ Поле f не задано, считаем f = 0")
        f_exprs = [sp.Integer(0)] * n
    missing = [f"g{a + 1}" for a in range(m) if a not in g_exprs]
    if missing:
        raise DimensionMismatchError(f"Не заданы поля: {', '.join(missing)}")
    if l > 0 and V is None:
        raise DimensionMismatchError("При l > 0 нужно задать V")

    system = ControlAffineSystem(
        n=n, m=m, l=l,
        f_exprs=tuple(f_exprs),
        g_exprs=tuple(tuple(g_exprs[a]) for a in range(m)),
        U=U, V=V,
        analytic_jacobians=analytic_jacobians,
    )
    logger.debug(f"✅ Разобрана система n={n}, m={m}, l={l}")
    return system


def load_system(path: str, analytic_jacobians: bool = True) -> ControlAffineSystem:
    with open(path, "r", encoding="utf-8") as f:
        return parse_system(f.read(), analytic_jacobians=analytic_jacobians)


def format_system(system: ControlAffineSystem) -> str:
    """Печатает систему обратно в DSL (parse(format(s)) дает ту же систему)"""
    def vector(exprs):
        return "(" + ", ".join(format_expression(e) for e in exprs) + ")"

    lines = [f"n={system.n};m={system.m};l={system.l}", f"f = {vector(system.f_exprs)}"]
    for alpha, g in enumerate(system.g_exprs):
        lines.append(f"g{alpha + 1} = {vector(g)}")
    lines.append(f"U = {system.U.describe()}")
    if system.l > 0 and system.V is not None:
        lines.append(f"V = {system.V.describe()}")
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class CostFunction:
    """Функция стоимости psi(x, u) из выражения DSL"""
    text: str
    n: int
    m: int
    expr: sp.Expr = field(init=False, repr=False)
    _func: Callable = field(init=False, repr=False)

    def __post_init__(self):
        xs, us, _ = make_symbols(self.n, self.m, 0)
        expr = parse_expression(self.text, xs + us)
        object.__setattr__(self, "expr", expr)
        object.__setattr__(self, "_func", sp.lambdify(xs + us, expr, modules="numpy"))

    def __call__(self, x, u) -> float:
        return float(self._func(*np.atleast_1d(x), *np.atleast_1d(u)))

    def batch(self, X: np.ndarray, U: np.ndarray) -> np.ndarray:
        cols = [X[:, i] for i in range(self.n)] + [U[:, i] for i in range(self.m)]
        return np.broadcast_to(np.asarray(self._func(*cols), dtype=float), (X.shape[0],)).copy()

    @property
    def is_constant(self) -> bool:
        return not self.expr.free_symbols


# ---------------------------------------------------------------------------
# Проверка гипотез
# ---------------------------------------------------------------------------

ENFORCED_CHECKS = ("commutativity", "growth", "v_compact", "impulse_domain")


@dataclass
class HypothesisReport:
    """Численный аудит гипотез: коммутативность, рост, компактность V"""
    max_bracket_norm: float
    bracket_sample_points: List[Tuple[List[float], List[float]]]
    growth_constants: Dict[str, Tuple[float, float]]   # поле -> (M, N): |.| <= M + N |p|
    growth_sup: Tuple[float, float]              # sup |f|/(1+|p|), sup |g|/(1+|p|)
    lipschitz_estimate: float
    g_lipschitz_estimate: float
    passed: Dict[str, bool]
    tolerances: Dict[str, float]
    worst_bracket: Optional[Dict] = None
    dphi_bound: Optional[float] = None

    @property
    def all_passed(self) -> bool:
        return all(self.passed.get(name, False) for name in ENFORCED_CHECKS)

    def to_dict(self) -> Dict:
        return {
            "max_bracket_norm": self.max_bracket_norm,
            "bracket_sample_points": [[list(x), list(u)] for x, u in self.bracket_sample_points],
            "growth_constants": {name: list(pair) for name, pair in self.growth_constants.items()},
            "growth_sup": list(self.growth_sup),
            "lipschitz_estimate": self.lipschitz_estimate,
            "g_lipschitz_estimate": self.g_lipschitz_estimate,
            "passed": dict(self.passed),
            "all_passed": self.all_passed,
            "tolerances": dict(self.tolerances),
            "worst_bracket": self.worst_bracket,
            "dphi_bound": self.dphi_bound,
        }

    def summary(self) -> str:
        lines = ["📊 Проверка гипотез:"]
        for name, ok in self.passed.items():
            mark = "✅" if ok else "❌"
            note = "" if name in ENFORCED_CHECKS else " (только отчет)"
            lines.append(f"  {mark} {name}{note}")
        lines.append(f"  max |[g_a, g_b]| = {self.max_bracket_norm:.3e}")
        for name, (M, N) in self.growth_constants.items():
            lines.append(f"  |{name}| <= M + N |p|: M = {M:.4g}, N = {N:.4g}")
        lines.append(f"  Липшиц (оценка) = {self.lipschitz_estimate:.4g}")
        if self.dphi_bound is not None:
            lines.append(f"  sup |Dphi| (оценка) = {self.dphi_bound:.4g}")
        if self.worst_bracket and not self.passed.get("commutativity", True):
            wb = self.worst_bracket
            lines.append(f"  ❌ Некоммутирующая пара (g{wb['alpha'] + 1}, g{wb['beta'] + 1}) "
                         f"в точке {wb['point']}: |[g, g]| = {wb['norm']:.3e}")
        return "\n".join(lines)


def lie_bracket(system: ControlAffineSystem, alpha: int, beta: int, p) -> np.ndarray:
    """
    [g_a, g_b] = Dg_b g_a - Dg_a g_b для расширенных полей (индексы с нуля)
    """
    for idx in (alpha, beta):
        if not 0 <= idx < system.m:
            raise IndexError(f"Индекс поля {idx} вне 0..{system.m - 1}")
    p = np.asarray(p, dtype=float)
    if alpha == beta:
        return np.zeros(system.n + system.m)
    bracket = (system.jac_g_ext(beta, p) @ system.g_ext(alpha, p)
               - system.jac_g_ext(alpha, p) @ system.g_ext(beta, p))
    if not np.all(np.isfinite(bracket)):
        raise JacobianEvaluationError(f"Нечисловая скобка Ли в точке {p}")
    # Последние m компонент нулевые по построению
    bracket[system.n:] = 0.0
    return bracket


def sample_box(box: BoxSet, count: int, seed: int = 0) -> np.ndarray:
    """Квази-случайные точки (скрамблированная последовательность Халтона)"""
    sampler = qmc.Halton(d=box.dim, scramble=True, seed=seed)
    lo, hi = box.bounds()
    return lo + (hi - lo) * sampler.random(count)


def growth_fit(radii: np.ndarray, norms: np.ndarray) -> Tuple[float, float]:
    """
    (M, N) для |h(p)| <= M + N |p|: N - наклон МНК с свободным членом (не меньше 0),
    M поднят так, что оценка верна во всех точках выборки
    """
    radii = np.asarray(radii, dtype=float)
    norms = np.asarray(norms, dtype=float)
    if radii.size > 1 and np.ptp(radii) > 0:
        design = np.column_stack([np.ones_like(radii), radii])
        coef, *_ = np.linalg.lstsq(design, norms, rcond=None)
        N = max(float(coef[1]), 0.0)
    else:
        N = 0.0
    M = max(float(np.max(norms - N * radii)), 0.0)
    return M, N


def check_hypotheses(system: ControlAffineSystem, box: BoxSet, n_samples: int = 256,
                     tol_bracket: Optional[float] = None, seed: int = 0) -> HypothesisReport:
    """
    Квази-случайный аудит гипотез в боксе на R^{n+m}.
    Отчет содержит флаги; исключения не бросаются.
    """
    if n_samples < 1:
        raise ValueError("n_samples должен быть >= 1")
    if box.dim != system.n + system.m:
        raise DimensionMismatchError(f"Бокс аудита размерности {box.dim} вместо n+m={system.n + system.m}")

    points = sample_box(box, n_samples, seed)
    v_points = control_grid(system.V, system.l)

    max_norm = 0.0
    worst: Optional[Dict] = None
    commutes = True
    radii, f_norms, g_norms = [], [], []
    lipschitz, g_lipschitz = 0.0, 0.0

    for p in points:
        radius = 1.0 + float(np.linalg.norm(p))
        tol = tol_bracket if tol_bracket is not None else 1e-6 * radius ** 2

        for alpha in range(system.m):
            for beta in range(alpha + 1, system.m):
                norm = float(np.linalg.norm(lie_bracket(system, alpha, beta, p)))
                if worst is None or norm > max_norm:
                    max_norm = norm
                    worst = {"alpha": alpha, "beta": beta, "point": p.tolist(), "norm": norm}
                if norm > tol:
                    commutes = False

        radii.append(radius)
        f_norms.append(max(float(np.linalg.norm(system.f_ext(p, v))) for v in v_points))
        g_norms.append(max(float(np.linalg.norm(system.g_ext(a, p))) for a in range(system.m)))

        for v in v_points:
            lipschitz = max(lipschitz, float(np.linalg.norm(system.jac_f_ext(p, v), 2)))
        for a in range(system.m):
            g_lipschitz = max(g_lipschitz, float(np.linalg.norm(system.jac_g_ext(a, p), 2)))
    lipschitz = max(lipschitz, g_lipschitz)

    r = np.array(radii)
    fits = {"f": growth_fit(r - 1.0, np.array(f_norms)), "g": growth_fit(r - 1.0, np.array(g_norms))}
    sups = (float(np.max(np.array(f_norms) / r)), float(np.max(np.array(g_norms) / r)))

    passed = {
        "commutativity": commutes,
        "growth": bool(np.isfinite(list(fits.values())).all() and np.isfinite(sups).all()),
        "v_compact": system.l == 0 or (system.V is not None and system.V.is_compact),
        "impulse_domain": system.U.kind in ("box", "polytope", "full") and system.U.is_convex,
        "g_lipschitz": bool(np.isfinite(g_lipschitz)),
    }

    report = HypothesisReport(
        max_bracket_norm=max_norm,
        bracket_sample_points=[(p[:system.n].tolist(), p[system.n:].tolist()) for p in points],
        growth_constants=fits,
        growth_sup=sups,
        lipschitz_estimate=lipschitz,
        g_lipschitz_estimate=g_lipschitz,
        passed=passed,
        tolerances={"tol_bracket": tol_bracket if tol_bracket is not None else -1.0,
                    "h_jac": system.h_jac or config.h_jac},
        worst_bracket=worst if system.m > 1 else None,
    )
    logger.info(f"📊 Гипотезы: коммутативность={'✅' if commutes else '❌'}, "
                f"max |[g,g]| = {max_norm:.2e} по {n_samples} точкам")
    return report
