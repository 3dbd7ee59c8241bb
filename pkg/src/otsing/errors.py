from __future__ import annotations

from collections.abc import Iterator
from contextlib import contextmanager


class OtsingError(Exception):
    """Root of every error the toolkit raises on purpose."""

    kind = "error"
    exit_code = 1


class ConfigError(OtsingError, ValueError):
    kind = "config"
    exit_code = 1


class FormatError(OtsingError, OSError):
    kind = "io"
    exit_code = 2

    def __init__(self, path: object, detail: str):
        self.path = str(path)
        self.detail = detail
        super().__init__(f"{self.path}: {detail}")

    def __str__(self) -> str:
        return f"{self.path}: {self.detail}"


class NumericError(OtsingError, ArithmeticError):
    kind = "numeric"
    exit_code = 3


class DimensionError(ConfigError):
    def __init__(self, expected: int, got: int, what: str = "vector"):
        self.expected = expected
        self.got = got
        super().__init__(f"{what} has dimension {got}, expected {expected}")


@contextmanager
def at_stage(name: str) -> Iterator[None]:
    """Tag errors escaping the block with the pipeline stage that raised them."""
    try:
        yield
    except (OtsingError, OSError) as e:
        if getattr(e, "stage", None) is None:
            e.stage = name
        raise
