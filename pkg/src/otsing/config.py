from __future__ import annotations

import types
import typing
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from enum import Enum, StrEnum
from pathlib import Path

import numpy as np

from otsing.errors import ConfigError
from otsing.formats import read_json
from otsing.metrics import MetricsConfig
from otsing.sdot.measure import DEFAULT_BOX_MARGIN, BaseMeasure, MeasureKind
from otsing.sdot.singularity import DEFAULT_RHO, AdjacencyMode
from otsing.sdot.solver import SolverConfig
from otsing.synthesis.otis import DEFAULT_GUARD, DEFAULT_PER_BOUNDARY, DEFAULT_RETRY_CAP
from otsing.training.model import TrainConfig
from otsing.training.toy import ToyConfig

# ── Blocks ───────────────────────────────────────────────────────────────────


class DataSource(StrEnum):
    TOY = "toy"
    FILES = "files"


class SweepMode(StrEnum):
    TOPK = "topk"
    RANB = "ranb"
    LATENT_INTERP = "latent_interp"
    INPUT_INTERP = "input_interp"
    BASELINE = "baseline"


@dataclass(frozen=True)
class DataConfig:
    """Where the ID/OOD inputs come from. Relative paths resolve against the config file."""

    source: DataSource = DataSource.TOY
    train_points: str | None = None
    train_labels: str | None = None
    test_points: str | None = None
    test_labels: str | None = None
    ood_points: str | None = None

    def __post_init__(self):
        if self.source == DataSource.FILES:
            for name in ("train_points", "train_labels", "ood_points"):
                if getattr(self, name) is None:
                    raise ConfigError(f"data.{name} is required when data.source is 'files'")
        if (self.test_points is None) != (self.test_labels is None):
            raise ConfigError("data.test_points and data.test_labels must be given together")


@dataclass(frozen=True)
class BaseConfig:
    kind: MeasureKind = MeasureKind.UNIFORM
    box_margin: float = DEFAULT_BOX_MARGIN
    box_lo: tuple[float, ...] | None = None
    box_hi: tuple[float, ...] | None = None
    stddev: float = 1.0
    mean: tuple[float, ...] | None = None

    def __post_init__(self):
        if (self.box_lo is None) != (self.box_hi is None):
            raise ConfigError("base.box_lo and base.box_hi must be given together")

    def build(self, points: np.ndarray) -> BaseMeasure:
        """The configured measure; an unset uniform box hugs ``points``."""
        dim = points.shape[1]
        if self.kind == MeasureKind.GAUSSIAN:
            return BaseMeasure.gaussian(dim, self.stddev, self.mean)
        if self.box_lo is not None:
            return BaseMeasure.uniform(self.box_lo, self.box_hi)
        return BaseMeasure.bounding_box(points, self.box_margin)


@dataclass(frozen=True)
class BoundaryConfig:
    mode: AdjacencyMode = AdjacencyMode.ALL_PAIRS
    rho: float = DEFAULT_RHO
    strict_scores: bool = True

    def __post_init__(self):
        if not 0 < self.rho <= 1:
            raise ConfigError(f"boundaries.rho must lie in (0, 1], got {self.rho}")


@dataclass(frozen=True)
class SynthesisConfig:
    codec: str = "identity"
    per_boundary: int = DEFAULT_PER_BOUNDARY
    slab: float | str | None = "auto"
    guard: float = DEFAULT_GUARD
    retry_cap: int = DEFAULT_RETRY_CAP

    def __post_init__(self):
        if self.per_boundary < 1:
            raise ConfigError(f"synthesis.per_boundary must be >= 1, got {self.per_boundary}")
        if isinstance(self.slab, str) and self.slab not in ("auto", "off"):
            raise ConfigError(f"synthesis.slab must be 'auto', 'off' or a number, got '{self.slab}'")
        if isinstance(self.slab, float) and not self.slab > 0:
            raise ConfigError(f"synthesis.slab must be > 0, got {self.slab}")
        if not self.guard > 0:
            raise ConfigError(f"synthesis.guard must be > 0, got {self.guard}")
        if self.retry_cap < 1:
            raise ConfigError(f"synthesis.retry_cap must be >= 1, got {self.retry_cap}")


@dataclass(frozen=True)
class SweepConfig:
    rhos: tuple[float, ...] = (0.05, 0.10, 0.25)
    modes: tuple[SweepMode, ...] = tuple(SweepMode)

    def __post_init__(self):
        bad = [r for r in self.rhos if not 0 < r <= 1]
        if bad:
            raise ConfigError(f"sweep.rhos must lie in (0, 1], got {bad}")


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    strict: bool = False
    threads: int | None = None
    out_dir: str = "runs/otsing"
    data: DataConfig = field(default_factory=DataConfig)
    toy: ToyConfig = field(default_factory=ToyConfig)
    base: BaseConfig = field(default_factory=BaseConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    boundaries: BoundaryConfig = field(default_factory=BoundaryConfig)
    synthesis: SynthesisConfig = field(default_factory=SynthesisConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    root: Path = field(default=Path("."), compare=False, repr=False)

    def __post_init__(self):
        if not 0 <= self.seed < 2**64:
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        if self.threads is not None and self.threads < 1:
            raise ConfigError(f"threads must be >= 1, got {self.threads}")

    def resolve(self, path: str | None) -> Path | None:
        if path is None:
            return None
        p = Path(path)
        return p if p.is_absolute() else self.root / p


# ── Loading ──────────────────────────────────────────────────────────────────


def _dotted(prefix: str, key: str) -> str:
    return f"{prefix}.{key}" if prefix else key


def _describe(hint) -> str:
    return getattr(hint, "__name__", None) or str(hint)


def _coerce(path: str, value, hint):
    origin = typing.get_origin(hint)
    if origin in (typing.Union, types.UnionType):
        options = typing.get_args(hint)
        if value is None and type(None) in options:
            return None
        for option in options:
            if option is type(None):
                continue
            try:
                return _coerce(path, value, option)
            except ConfigError:
                continue
        wanted = " or ".join(_describe(o) for o in options if o is not type(None))
        raise ConfigError(f"{path}: expected {wanted}, got {value!r}")
    if origin is tuple:
        if not isinstance(value, list):
            raise ConfigError(f"{path}: expected a list, got {value!r}")
        element = typing.get_args(hint)[0]
        return tuple(_coerce(f"{path}[{k}]", v, element) for k, v in enumerate(value))
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true or false, got {value!r}")
        return value
    if hint is int:
        if not isinstance(value, int) or isinstance(value, bool):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if hint is float:
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    if isinstance(hint, type) and issubclass(hint, Enum):
        try:
            return hint(value)
        except ValueError:
            allowed = ", ".join(str(m.value) for m in hint)
            raise ConfigError(f"{path}: '{value}' is not one of {allowed}") from None
    if is_dataclass(hint):
        return _build(path, value, hint)
    raise ConfigError(f"{path}: unsupported setting type {_describe(hint)}")


def _build(prefix: str, doc, cls):
    if not isinstance(doc, dict):
        raise ConfigError(f"{prefix or 'config'}: expected a JSON object, got {type(doc).__name__}")
    hints = typing.get_type_hints(cls)
    known = {f.name for f in fields(cls) if f.init and f.name != "root"}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ConfigError(f"unknown config key '{_dotted(prefix, unknown[0])}'")
    kwargs = {key: _coerce(_dotted(prefix, key), value, hints[key]) for key, value in doc.items()}
    return cls(**kwargs)


def config_from_dict(doc: dict, root: str | Path = ".") -> RunConfig:
    config = _build("", doc, RunConfig)
    return replace(config, root=Path(root))


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return config_from_dict(read_json(path), root=path.parent)


def with_overrides(
    config: RunConfig,
    *,
    seed: int | None = None,
    strict: bool | None = None,
    threads: int | None = None,
    out_dir: str | Path | None = None,
) -> RunConfig:
    """Apply global CLI flags. A seed override also reseeds the trainer."""
    if seed is not None:
        config = replace(config, seed=seed, train=replace(config.train, seed=seed))
    if strict is not None:
        config = replace(config, strict=strict)
    if threads is not None:
        config = replace(config, threads=threads)
    if out_dir is not None:
        config = replace(config, out_dir=str(out_dir))
    return config


def _plain(value):
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, Enum):
        return value.value
    return value


def resolved_config(config: RunConfig) -> dict:
    """Every setting with its effective value, defaults included."""
    doc = asdict(config)
    doc.pop("root")
    return _plain(doc)
