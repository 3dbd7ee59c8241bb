from __future__ import annotations

import shlex
import subprocess
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from enum import StrEnum
from pathlib import Path

import numpy as np

from otsing.errors import ConfigError, FormatError, NumericError
from otsing.formats import read_json, read_otpc, write_otpc

# ── Constants ────────────────────────────────────────────────────────────────

MAX_CONDITION = 1e12
EXTERNAL_MANIFEST = "codec.json"


# ── Errors ───────────────────────────────────────────────────────────────────


class CodecError(ConfigError):
    pass


class ExternalCodecError(NumericError):
    def __init__(self, command: str, detail: str):
        self.command = command
        super().__init__(f"external codec command failed ({command}): {detail}")


# ── Codecs ───────────────────────────────────────────────────────────────────


class CodecKind(StrEnum):
    IDENTITY = "identity"
    AFFINE = "affine"
    EXTERNAL = "external"


class Codec(ABC):
    """Maps inputs to latents (encode) and latents back to inputs (decode), row-wise."""

    kind: CodecKind

    @abstractmethod
    def encode(self, x: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def decode(self, y: np.ndarray) -> np.ndarray: ...


class IdentityCodec(Codec):
    kind = CodecKind.IDENTITY

    def encode(self, x: np.ndarray) -> np.ndarray:
        return np.array(x, dtype=np.float64)

    def decode(self, y: np.ndarray) -> np.ndarray:
        return np.array(y, dtype=np.float64)


@dataclass(eq=False)
class AffineCodec(Codec):
    """encode(x) = A x + c; decode(y) = A^-1 (y - c)."""

    matrix: np.ndarray
    offset: np.ndarray
    inverse: np.ndarray = field(init=False, repr=False)
    kind = CodecKind.AFFINE

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        self.offset = np.asarray(self.offset, dtype=np.float64)
        rows, cols = self.matrix.shape if self.matrix.ndim == 2 else (0, -1)
        if rows != cols or rows == 0:
            raise CodecError(f"affine codec needs a square matrix, got shape {self.matrix.shape}")
        if self.offset.shape != (rows,):
            raise CodecError(f"affine offset must have {rows} entries, got shape {self.offset.shape}")
        cond = np.linalg.cond(self.matrix)
        if not np.isfinite(cond) or cond > MAX_CONDITION:
            raise CodecError(f"affine codec matrix is ill-conditioned (cond={cond:.3g})")
        self.inverse = np.linalg.inv(self.matrix)

    @classmethod
    def from_json(cls, path: str | Path) -> AffineCodec:
        doc = read_json(path)
        if not isinstance(doc, dict) or "matrix" not in doc:
            raise FormatError(path, "affine codec JSON needs a 'matrix' key")
        matrix = np.asarray(doc["matrix"], dtype=np.float64)
        offset = doc.get("offset", [0.0] * matrix.shape[0])
        return cls(matrix, np.asarray(offset, dtype=np.float64))

    def encode(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=np.float64) @ self.matrix.T + self.offset

    def decode(self, y: np.ndarray) -> np.ndarray:
        return (np.asarray(y, dtype=np.float64) - self.offset) @ self.inverse.T


@dataclass(eq=False)
class ExternalCodec(Codec):
    """Runs user-supplied encoder/decoder commands that exchange OTPC files.

    ``directory/codec.json`` holds {"encode": "...", "decode": "..."}; each
    command template receives ``{input}`` and ``{output}`` paths.
    """

    directory: Path
    encode_cmd: str | None = None
    decode_cmd: str | None = None
    timeout: float = 600.0
    kind = CodecKind.EXTERNAL

    @classmethod
    def from_directory(cls, directory: str | Path) -> ExternalCodec:
        directory = Path(directory)
        manifest = directory / EXTERNAL_MANIFEST
        if not manifest.exists():
            raise CodecError(f"external codec directory {directory} has no {EXTERNAL_MANIFEST}")
        doc = read_json(manifest)
        if not isinstance(doc, dict):
            raise FormatError(manifest, "codec manifest must be a JSON object")
        return cls(directory, doc.get("encode"), doc.get("decode"), float(doc.get("timeout", 600.0)))

    def _run(self, template: str | None, stage: str, data: np.ndarray) -> np.ndarray:
        if not template:
            raise CodecError(f"external codec in {self.directory} defines no '{stage}' command")
        src = write_otpc(self.directory / f"{stage}_in.otpc", np.atleast_2d(data))
        dst = self.directory / f"{stage}_out.otpc"
        dst.unlink(missing_ok=True)
        command = template.format(input=shlex.quote(str(src)), output=shlex.quote(str(dst)))
        try:
            done = subprocess.run(
                shlex.split(command), capture_output=True, text=True, timeout=self.timeout, check=False
            )
        except (OSError, subprocess.TimeoutExpired) as e:
            raise ExternalCodecError(command, str(e)) from None
        if done.returncode != 0:
            raise ExternalCodecError(command, f"exit {done.returncode}: {done.stderr.strip()[:200]}")
        out, _ = read_otpc(dst)
        if out.shape[0] != data.shape[0]:
            raise ExternalCodecError(command, f"returned {out.shape[0]} rows for {data.shape[0]} inputs")
        return out

    def encode(self, x: np.ndarray) -> np.ndarray:
        return self._run(self.encode_cmd, "encode", np.asarray(x, dtype=np.float64))

    def decode(self, y: np.ndarray) -> np.ndarray:
        return self._run(self.decode_cmd, "decode", np.asarray(y, dtype=np.float64))


def parse_codec(choice: str) -> Codec:
    """Resolve ``identity``, ``affine:<json>`` or ``external:<dir>``."""
    name, _, arg = choice.partition(":")
    try:
        kind = CodecKind(name.strip().lower())
    except ValueError:
        raise CodecError(
            f"Unknown codec '{choice}'. Available: identity, affine:<json>, external:<dir>"
        ) from None
    if kind == CodecKind.IDENTITY:
        return IdentityCodec()
    if not arg:
        raise CodecError(f"codec '{kind}' needs a path, e.g. '{kind}:<path>'")
    if kind == CodecKind.AFFINE:
        return AffineCodec.from_json(arg)
    return ExternalCodec.from_directory(arg)
