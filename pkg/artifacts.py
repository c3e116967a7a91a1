"""
Выходные файлы: JSON отчеты (orjson), CSV таблицы, манифест запуска
"""
import csv
import logging
import os
import platform
import time
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np
import orjson

logger = logging.getLogger(__name__)

TOOL_NAME = "impulse-lab"
TOOL_VERSION = "0.3.0"

JSON_OPTIONS = orjson.OPT_INDENT_2 | orjson.OPT_SORT_KEYS | orjson.OPT_SERIALIZE_NUMPY


def _default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, (set, tuple)):
        return list(obj)
    raise TypeError(f"Тип {type(obj).__name__} не сериализуется")


def dumps(data: Any) -> bytes:
    return orjson.dumps(data, option=JSON_OPTIONS, default=_default)


def write_json(path: str, data: Any) -> str:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "wb") as f:
        f.write(dumps(data))
        f.write(b"\n")
    logger.debug(f"💾 JSON записан: {path}")
    return path


def read_json(path: str) -> Any:
    with open(path, "rb") as f:
        return orjson.loads(f.read())


def format_float(value: float) -> str:
    """17 значащих цифр, точка как разделитель"""
    return format(float(value), ".17g")


def _cell(value) -> str:
    if isinstance(value, (float, np.floating)):
        return format_float(value)
    return str(value)


def write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence]) -> str:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])
    logger.debug(f"💾 CSV записан: {path}")
    return path


def read_csv(path: str) -> List[Dict[str, str]]:
    with open(path, "r", encoding="utf-8", newline="") as f:
        return list(csv.DictReader(f))


def trajectory_csv(path: str, trajectory) -> str:
    """Столбцы t, side, x1..xn, u1..um; в точках разрыва строки L и R"""
    n = trajectory.states.shape[1]
    m = trajectory.controls.shape[1]
    header = ["t", "side"] + [f"x{i + 1}" for i in range(n)] + [f"u{i + 1}" for i in range(m)]
    rows = ([t, side] + list(x) + list(u) for t, side, x, u in trajectory.rows())
    return write_csv(path, header, rows)


def report_csv(path: str, rows: List[Dict[str, Any]]) -> str:
    """Таблица из списка словарей с одинаковыми ключами"""
    header = list(rows[0].keys()) if rows else []
    return write_csv(path, header, ([row[k] for k in header] for row in rows))


@dataclass
class RunManifest:
    """Манифест запуска: все, что нужно для повторения результата"""
    command: str
    inputs: Dict[str, str] = field(default_factory=dict)
    seed: int = 0
    tolerances: Dict[str, Any] = field(default_factory=dict)
    outputs: List[str] = field(default_factory=list)
    arguments: Dict[str, Any] = field(default_factory=dict)
    tool: str = TOOL_NAME
    version: str = TOOL_VERSION
    started_at: float = field(default_factory=time.time)
    wall_clock_seconds: Optional[float] = None
    exit_code: Optional[int] = None

    def add_output(self, path: str) -> str:
        self.outputs.append(path)
        return path

    def finish(self, exit_code: int) -> 'RunManifest':
        self.wall_clock_seconds = time.time() - self.started_at
        self.exit_code = exit_code
        return self

    def to_dict(self) -> Dict[str, Any]:
        return {
            "command": self.command,
            "inputs": self.inputs,
            "seed": self.seed,
            "tolerances": self.tolerances,
            "outputs": sorted(self.outputs),
            "arguments": self.arguments,
            "tool": self.tool,
            "version": self.version,
            "python": platform.python_version(),
            "wall_clock_seconds": self.wall_clock_seconds,
            "exit_code": self.exit_code,
        }

    def write(self, out_dir: str) -> str:
        return write_json(os.path.join(out_dir, "manifest.json"), self.to_dict())
