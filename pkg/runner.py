"""
Параллельный запуск независимых вычислений и потоки случайных чисел по назначению
"""
import asyncio
import hashlib
import logging
from typing import Any, Callable, List, Optional, Sequence, TypeVar

import numpy as np

from config import config

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def purpose_key(purpose: str) -> int:
    """Стабильный 64-битный ключ назначения (не зависит от PYTHONHASHSEED)"""
    return int.from_bytes(hashlib.sha256(purpose.encode("utf-8")).digest()[:8], "little")


def purpose_seed(seed: int, purpose: str) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, purpose_key(purpose)])


def purpose_rng(seed: int, purpose: str) -> np.random.Generator:
    """Отдельный генератор на каждое назначение: 'restarts', 'cloud:L1', ..."""
    return np.random.default_rng(purpose_seed(seed, purpose))


def spawn_rngs(seed: int, purpose: str, count: int) -> List[np.random.Generator]:
    """count независимых генераторов; i-й зависит только от (seed, purpose, i)"""
    return [np.random.default_rng(s) for s in purpose_seed(seed, purpose).spawn(count)]


async def _gather_limited(func: Callable[[T], R], items: Sequence[T], threads: int) -> List[R]:
    semaphore = asyncio.Semaphore(threads)

    async def run_one(item: T) -> R:
        async with semaphore:
            return await asyncio.to_thread(func, item)

    return await asyncio.gather(*(run_one(item) for item in items))


def run_parallel(func: Callable[[T], R], items: Sequence[T], threads: Optional[int] = None) -> List[R]:
    """
    Применяет чистую функцию к элементам; результаты в порядке входа.
    При threads = 1 считает последовательно без цикла событий.
    """
    threads = config.threads if threads is None else threads
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    logger.debug(f"🔄 Параллельный запуск {len(items)} задач в {threads} потоках")
    return asyncio.run(run_parallel_async(func, items, threads))


async def run_parallel_async(func: Callable[[T], R], items: Sequence[T], threads: int) -> List[R]:
    """Вариант для вызова из уже работающего цикла событий"""
    return await _gather_limited(func, list(items), max(1, threads))


def safe_call(func: Callable[..., Any], *args, **kwargs):
    """(результат, None) или (None, исключение) - для подсчета отказов кандидатов"""
    try:
        return func(*args, **kwargs), None
    except Exception as e:  # noqa: BLE001 - отказ кандидата не должен останавливать поиск
        return None, e
