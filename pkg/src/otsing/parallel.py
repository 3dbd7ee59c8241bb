from __future__ import annotations

import os
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from typing import TypeVar

from dotenv import load_dotenv

from otsing.errors import ConfigError

load_dotenv()

T = TypeVar("T")

THREADS_ENV = "OTSING_THREADS"

_threads: int | None = None


def resolve_threads(cli_value: int | None = None) -> int:
    # 1. Explicit flag
    if cli_value is not None:
        if cli_value < 1:
            raise ConfigError(f"--threads must be >= 1, got {cli_value}")
        return cli_value
    # 2. Environment variable (includes .env via dotenv)
    raw = os.environ.get(THREADS_ENV, "").strip()
    if raw:
        try:
            value = int(raw)
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got '{raw}'") from None
        if value < 1:
            raise ConfigError(f"{THREADS_ENV} must be >= 1, got {value}")
        return value
    return 1


def set_threads(count: int | None) -> None:
    global _threads
    _threads = count


def get_threads() -> int:
    return _threads if _threads is not None else resolve_threads()


def chunk_bounds(total: int, chunk: int) -> list[tuple[int, int]]:
    """Fixed [start, stop) ranges; independent of the worker count."""
    return [(start, min(start + chunk, total)) for start in range(0, total, chunk)]


def map_chunks(fn: Callable[[int, int], T], bounds: Sequence[tuple[int, int]]) -> list[T]:
    """Apply fn to every range, returning results in range order."""
    workers = min(get_threads(), len(bounds))
    if workers <= 1:
        return [fn(lo, hi) for lo, hi in bounds]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda b: fn(*b), bounds))
