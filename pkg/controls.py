"""
Импульсные управления u, определенные в КАЖДОЙ точке [a, b], и обычные управления v

Кусок u задан на полуинтервале [start, end): значение в точке разрыва
принадлежит правому куску, u(b) задается явно.
"""
import bisect
import logging
from dataclasses import dataclass, field, replace
from typing import Callable, List, Literal, Optional, Sequence, Tuple

import numpy as np
import orjson
import sympy as sp
from pydantic import BaseModel, Field, model_validator
from scipy.integrate import quad

from errors import ControlValidationError, HorizonError, InputFormatError
from sysmodel import ControlAffineSystem, parse_expression

logger = logging.getLogger(__name__)

PIECE_KINDS = ("constant", "affine", "expression")
SIGNAL_KINDS = ("AC", "PiecewiseDefined")

_T = sp.Symbol("t", real=True)
_TIME_TOL = 1e-14


def _vec(values) -> Tuple[float, ...]:
    return tuple(float(v) for v in np.atleast_1d(np.asarray(values, dtype=float)))


@dataclass(frozen=True)
class UPiece:
    """Кусок u на [start, end): константа, аффинная функция или выражение от t"""
    start: float
    end: float
    kind: str = "constant"
    value: Tuple[float, ...] = ()          # значение в start (constant, affine)
    slope: Tuple[float, ...] = ()          # affine
    expressions: Tuple[str, ...] = ()      # expression: по одной строке на компоненту

    _funcs: Optional[Tuple[Callable, Callable]] = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in PIECE_KINDS:
            raise ControlValidationError(f"Неизвестный тип куска: {self.kind}")
        if not self.end > self.start:
            raise ControlValidationError(f"Пустой кусок [{self.start}, {self.end})")
        if self.kind == "affine" and len(self.slope) != len(self.value):
            raise ControlValidationError("Аффинный кусок: длины value и slope различны")
        if self.kind == "expression":
            if not self.expressions:
                raise ControlValidationError("Кусок expression без выражений")
            exprs = [parse_expression(text, [_T]) for text in self.expressions]
            value_f = sp.lambdify(_T, exprs, modules="numpy")
            deriv_f = sp.lambdify(_T, [sp.diff(e, _T) for e in exprs], modules="numpy")
            object.__setattr__(self, "_funcs", (value_f, deriv_f))
        elif not self.value:
            raise ControlValidationError("Кусок без значения")

    @property
    def dim(self) -> int:
        return len(self.expressions) if self.kind == "expression" else len(self.value)

    @property
    def width(self) -> float:
        return self.end - self.start

    def at(self, t: float) -> np.ndarray:
        if self.kind == "constant":
            return np.array(self.value)
        if self.kind == "affine":
            return np.array(self.value) + np.array(self.slope) * (t - self.start)
        return np.array(self._funcs[0](t), dtype=float)

    def derivative(self, t: float) -> np.ndarray:
        if self.kind == "constant":
            return np.zeros(self.dim)
        if self.kind == "affine":
            return np.array(self.slope)
        return np.array(self._funcs[1](t), dtype=float)

    def left_limit(self) -> np.ndarray:
        return self.at(self.end)

    def variation(self) -> float:
        """Длина дуги куска в R^m"""
        if self.kind == "constant":
            return 0.0
        if self.kind == "affine":
            return float(np.linalg.norm(self.slope)) * self.width
        value, _ = quad(lambda t: float(np.linalg.norm(self.derivative(t))), self.start, self.end, limit=200)
        return float(value)

    def arc_integral(self, t0: float, t1: float) -> float:
        """int_{t0}^{t1} (1 + |u'|) dt"""
        if self.kind == "constant":
            return t1 - t0
        if self.kind == "affine":
            return (1.0 + float(np.linalg.norm(self.slope))) * (t1 - t0)
        value, _ = quad(lambda t: 1.0 + float(np.linalg.norm(self.derivative(t))), t0, t1, limit=200)
        return float(value)

    def sample_points(self) -> List[float]:
        if self.kind == "expression":
            return list(np.linspace(self.start, self.end, 17))
        return [self.start, self.end]

    def shifted(self, start: float, end: float) -> 'UPiece':
        """Тот же закон на подынтервале [start, end)"""
        if self.kind == "affine":
            return UPiece(start, end, "affine", _vec(self.at(start)), self.slope)
        return replace(self, start=start, end=end)


@dataclass(frozen=True)
class VPiece:
    start: float
    end: float
    value: Tuple[float, ...]


@dataclass(frozen=True, eq=False)
class ControlSignal:
    """
    Пара (u, v) на [a, b]. u кусочно задана, правонепрерывна, u(b) = u_end.
    v кусочно-постоянна.
    """
    a: float
    b: float
    u_pieces: Tuple[UPiece, ...]
    u_end: Tuple[float, ...]
    v_pieces: Tuple[VPiece, ...] = ()
    kind: str = "PiecewiseDefined"
    truncation_level: Optional[int] = None

    def __post_init__(self):
        if not self.b > self.a:
            raise HorizonError(f"Пустой горизонт [{self.a}, {self.b}]")
        if self.kind not in SIGNAL_KINDS:
            raise ControlValidationError(f"Неизвестный вид управления: {self.kind}")
        self._check_cover(self.u_pieces, "u")
        if self.v_pieces:
            self._check_cover(self.v_pieces, "v")
            if len({len(p.value) for p in self.v_pieces}) != 1:
                raise ControlValidationError("Куски v разной размерности")
        dims = {p.dim for p in self.u_pieces} | {len(self.u_end)}
        if len(dims) != 1:
            raise ControlValidationError("Куски u разной размерности")
        if self.kind == "AC" and not self.is_ac:
            raise ControlValidationError("Управление объявлено AC, но имеет разрывы")

    def _check_cover(self, pieces, name: str):
        if not pieces:
            raise ControlValidationError(f"Нет кусков {name}")
        if abs(pieces[0].start - self.a) > _TIME_TOL or abs(pieces[-1].end - self.b) > _TIME_TOL:
            raise ControlValidationError(f"Куски {name} не покрывают [{self.a}, {self.b}]")
        for left, right in zip(pieces, pieces[1:]):
            if abs(left.end - right.start) > _TIME_TOL:
                raise ControlValidationError(f"Куски {name} не стыкуются в t={left.end}")

    # --- значения ---

    @property
    def m(self) -> int:
        return len(self.u_end)

    @property
    def l(self) -> int:
        return len(self.v_pieces[0].value) if self.v_pieces else 0

    @property
    def u_bar(self) -> np.ndarray:
        return self.u(self.a)

    def _check_time(self, t: float):
        if t < self.a - _TIME_TOL or t > self.b + _TIME_TOL:
            raise HorizonError(f"t={t} вне горизонта [{self.a}, {self.b}]")

    def _piece_index(self, t: float, pieces) -> int:
        starts = [p.start for p in pieces]
        return max(0, min(bisect.bisect_right(starts, t) - 1, len(pieces) - 1))

    def u(self, t: float) -> np.ndarray:
        """Значение u(t) (правонепрерывно, u(b) = u_end)"""
        self._check_time(t)
        if t >= self.b:
            return np.array(self.u_end)
        return self.u_pieces[self._piece_index(t, self.u_pieces)].at(t)

    def u_left(self, t: float) -> np.ndarray:
        """Левый предел u(t-); в t = a совпадает с u(a)"""
        self._check_time(t)
        if t <= self.a:
            return self.u(self.a)
        starts = [p.start for p in self.u_pieces]
        idx = max(0, bisect.bisect_left(starts, t) - 1)
        return self.u_pieces[idx].at(t)

    def u_dot(self, t: float) -> np.ndarray:
        self._check_time(t)
        t = min(t, self.b)
        return self.u_pieces[self._piece_index(t, self.u_pieces)].derivative(t)

    def v(self, t: float) -> np.ndarray:
        self._check_time(t)
        if not self.v_pieces:
            return np.zeros(0)
        return np.array(self.v_pieces[self._piece_index(min(t, self.b), self.v_pieces)].value)

    def u_piece_at(self, t: float) -> UPiece:
        return self.u_pieces[self._piece_index(t, self.u_pieces)]

    # --- структура ---

    @property
    def breakpoints(self) -> List[float]:
        """Все границы кусков u и v, включая a и b"""
        points = {self.a, self.b}
        points.update(p.start for p in self.u_pieces)
        points.update(p.start for p in self.v_pieces)
        return sorted(points)

    def jumps(self, tol: float = 1e-12) -> List[Tuple[float, np.ndarray, np.ndarray]]:
        """Разрывы u: (t, u(t-), u(t)); терминальный скачок в b включается"""
        result = []
        for piece in self.u_pieces[1:]:
            left, right = self.u_left(piece.start), self.u(piece.start)
            if np.linalg.norm(right - left) > tol:
                result.append((piece.start, left, right))
        left_b = self.u_pieces[-1].left_limit()
        if np.linalg.norm(np.array(self.u_end) - left_b) > tol:
            result.append((self.b, left_b, np.array(self.u_end)))
        return result

    @property
    def jump_times(self) -> List[float]:
        return [t for t, _, _ in self.jumps()]

    @property
    def is_ac(self) -> bool:
        return not self.jumps()

    def validate(self, system: ControlAffineSystem, tol: float = 1e-9) -> 'ControlSignal':
        """Проверяет размерности и что значения лежат в U и V"""
        if self.m != system.m:
            raise ControlValidationError(f"Управление u размерности {self.m} вместо m={system.m}")
        if system.l and self.l != system.l:
            raise ControlValidationError(f"Управление v размерности {self.l} вместо l={system.l}")
        for piece in self.u_pieces:
            for t in piece.sample_points():
                value = piece.at(t)
                if not system.U.contains(value, tol):
                    raise ControlValidationError(f"u({t:.6g}) = {value.tolist()} вне U")
        if not system.U.contains(np.array(self.u_end), tol):
            raise ControlValidationError(f"u(b) = {list(self.u_end)} вне U")
        if system.l and system.V is not None:
            for piece in self.v_pieces:
                if not system.V.contains(np.array(piece.value), tol):
                    raise ControlValidationError(f"v = {list(piece.value)} на [{piece.start}, {piece.end}) вне V")
        return self

    def l1_distance(self, other: 'ControlSignal') -> float:
        """||u - u'||_1 с евклидовой нормой в R^m"""
        points = sorted(set(self.breakpoints) | set(other.breakpoints))
        total = 0.0
        for t0, t1 in zip(points, points[1:]):
            value, _ = quad(lambda t: float(np.linalg.norm(self.u(t) - other.u(t))), t0, t1, limit=200)
            total += value
        return total

    def with_pieces(self, u_pieces: Sequence[UPiece], u_end=None, kind: Optional[str] = None) -> 'ControlSignal':
        return ControlSignal(
            a=self.a, b=self.b,
            u_pieces=tuple(u_pieces),
            u_end=self.u_end if u_end is None else _vec(u_end),
            v_pieces=self.v_pieces,
            kind=kind or self.kind,
            truncation_level=self.truncation_level,
        )

    def with_v(self, v_pieces: Sequence[VPiece]) -> 'ControlSignal':
        return replace(self, v_pieces=tuple(v_pieces))


# ---------------------------------------------------------------------------
# Семейства управлений
# ---------------------------------------------------------------------------

def constant_v(a: float, b: float, value) -> Tuple[VPiece, ...]:
    return (VPiece(a, b, _vec(value)),)


def piecewise_constant(times: Sequence[float], values: Sequence, u_end=None,
                       v_pieces: Sequence[VPiece] = ()) -> ControlSignal:
    """u = values[i] на [times[i], times[i+1]); u(b) по умолчанию равно последнему значению"""
    if len(times) != len(values) + 1:
        raise ControlValidationError("Нужно len(times) = len(values) + 1")
    pieces = tuple(UPiece(t0, t1, "constant", _vec(v)) for t0, t1, v in zip(times, times[1:], values))
    end = _vec(values[-1]) if u_end is None else _vec(u_end)
    return ControlSignal(times[0], times[-1], pieces, end, tuple(v_pieces))


def piecewise_affine(times: Sequence[float], nodes: Sequence, v_pieces: Sequence[VPiece] = ()) -> ControlSignal:
    """Непрерывная кусочно-аффинная u через узлы (times[i], nodes[i])"""
    if len(times) != len(nodes):
        raise ControlValidationError("Нужно len(times) = len(nodes)")
    nodes = [np.atleast_1d(np.asarray(v, dtype=float)) for v in nodes]
    pieces = tuple(
        UPiece(t0, t1, "affine", _vec(v0), _vec((v1 - v0) / (t1 - t0)))
        for t0, t1, v0, v1 in zip(times, times[1:], nodes, nodes[1:])
    )
    return ControlSignal(times[0], times[-1], pieces, _vec(nodes[-1]), tuple(v_pieces), kind="AC")


def step_control(t_jump: float, left, right, a: float = 0.0, b: float = 1.0,
                 v_pieces: Sequence[VPiece] = ()) -> ControlSignal:
    """Один скачок left -> right в момент t_jump"""
    return piecewise_constant([a, t_jump, b], [left, right], v_pieces=v_pieces)


def toy_control(k_max: int = 12) -> ControlSignal:
    """
    u = (-1)^(k+1) на [1 - 1/k, 1 - 1/(k+1)), k = 1..k_max, u(1) = 0;
    v = 1 на [0, 1/2), 0 после. Хвост после 1 - 1/k_max сливается с последним куском.
    """
    if k_max < 1:
        raise ControlValidationError("k_max должен быть >= 1")
    pieces = []
    for k in range(1, k_max + 1):
        start = 1.0 - 1.0 / k
        end = 1.0 if k == k_max else 1.0 - 1.0 / (k + 1)
        pieces.append(UPiece(start, end, "constant", ((-1.0) ** (k + 1),)))
    v_pieces = (VPiece(0.0, 0.5, (1.0,)), VPiece(0.5, 1.0, (0.0,)))
    return ControlSignal(0.0, 1.0, tuple(pieces), (0.0,), v_pieces, truncation_level=k_max)


# ---------------------------------------------------------------------------
# Файлы управлений
# ---------------------------------------------------------------------------

class UPieceModel(BaseModel):
    interval: Tuple[float, float]
    kind: Literal["constant", "affine", "expression"] = "constant"
    value: Optional[List[float]] = None
    slope: Optional[List[float]] = None
    expr: Optional[List[str]] = None

    @model_validator(mode="after")
    def _check_fields(self):
        if self.kind == "expression" and not self.expr:
            raise ValueError("кусок expression требует поле expr")
        if self.kind != "expression" and self.value is None:
            raise ValueError("кусок требует поле value")
        if self.kind == "affine" and self.slope is None:
            raise ValueError("аффинный кусок требует поле slope")
        return self


class VPieceModel(BaseModel):
    interval: Tuple[float, float]
    value: List[float]


class ControlFileModel(BaseModel):
    """JSON документ управления"""
    horizon: Tuple[float, float] = (0.0, 1.0)
    family: Optional[Literal["toy"]] = None
    k_max: Optional[int] = Field(default=None, ge=1)
    kind: Literal["AC", "PiecewiseDefined"] = "PiecewiseDefined"
    u_pieces: List[UPieceModel] = Field(default_factory=list)
    u_end: Optional[List[float]] = None
    v_pieces: List[VPieceModel] = Field(default_factory=list)

    @model_validator(mode="after")
    def _check_family(self):
        if self.family is None and not self.u_pieces:
            raise ValueError("нужны u_pieces или family")
        return self

    def to_signal(self, default_k_max: int = 12) -> ControlSignal:
        if self.family == "toy":
            return toy_control(self.k_max or default_k_max)
        pieces = tuple(
            UPiece(
                p.interval[0], p.interval[1], p.kind,
                _vec(p.value) if p.value is not None else (),
                _vec(p.slope) if p.slope is not None else (),
                tuple(p.expr or ()),
            )
            for p in self.u_pieces
        )
        u_end = _vec(self.u_end) if self.u_end is not None else _vec(pieces[-1].left_limit())
        v_pieces = tuple(VPiece(p.interval[0], p.interval[1], _vec(p.value)) for p in self.v_pieces)
        return ControlSignal(self.horizon[0], self.horizon[1], pieces, u_end, v_pieces,
                             kind=self.kind, truncation_level=self.k_max)


def signal_to_model(signal: ControlSignal) -> ControlFileModel:
    u_pieces = []
    for p in signal.u_pieces:
        u_pieces.append(UPieceModel(
            interval=(p.start, p.end), kind=p.kind,
            value=list(p.value) if p.kind != "expression" else None,
            slope=list(p.slope) if p.kind == "affine" else None,
            expr=list(p.expressions) if p.kind == "expression" else None,
        ))
    return ControlFileModel(
        horizon=(signal.a, signal.b),
        kind=signal.kind,
        k_max=signal.truncation_level,
        u_pieces=u_pieces,
        u_end=list(signal.u_end),
        v_pieces=[VPieceModel(interval=(p.start, p.end), value=list(p.value)) for p in signal.v_pieces],
    )


def parse_control(raw: bytes, default_k_max: int = 12) -> ControlSignal:
    """Разбирает JSON управления; ошибки JSON и схемы превращаются в InputFormatError"""
    try:
        model = ControlFileModel.model_validate(orjson.loads(raw))
    except (orjson.JSONDecodeError, ValueError) as e:
        raise InputFormatError(f"Некорректный файл управления: {e}") from e
    return model.to_signal(default_k_max)


def load_control(path: str, default_k_max: int = 12) -> ControlSignal:
    with open(path, "rb") as f:
        signal = parse_control(f.read(), default_k_max)
    logger.debug(f"📥 Загружено управление из {path}: {len(signal.u_pieces)} кусков u")
    return signal


def dump_control(signal: ControlSignal) -> bytes:
    return orjson.dumps(signal_to_model(signal).model_dump(exclude_none=True),
                        option=orjson.OPT_INDENT_2 | orjson.OPT_SORT_KEYS)
