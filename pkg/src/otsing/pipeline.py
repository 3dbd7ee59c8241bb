from __future__ import annotations

import logging
from collections.abc import Callable, Sequence
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from otsing.config import DataSource, RunConfig, SweepMode, resolved_config, with_overrides
from otsing.errors import at_stage
from otsing.formats import (
    boundary_payload,
    offsets_payload,
    otis_payload,
    read_labels,
    read_points,
    write_json,
    write_labels,
    write_otpc,
    write_rows,
)
from otsing.metrics import ConfidenceReport, HIST_HEADER, confidence_report, histogram_rows, summarize
from otsing.parallel import set_threads
from otsing.sdot.measure import BaseMeasure, SeededRng, sample
from otsing.sdot.singularity import (
    BoundaryRecord,
    candidate_boundaries,
    fraction_count,
    random_boundaries,
    select_singular,
)
from otsing.sdot.solver import (
    Assignment,
    CellStats,
    PointCloud,
    PotentialOffsets,
    SolveReport,
    assign,
    estimate_cells,
    optimize_offsets,
    require_converged,
)
from otsing.synthesis.codec import Codec, parse_codec
from otsing.synthesis.otis import (
    InterpolationMode,
    SynthesisSample,
    generate_otis,
    interpolation_baselines,
    stack_outputs,
)
from otsing.training.model import (
    HISTORY_HEADER,
    EpochRecord,
    ToyClassifier,
    init_classifier,
    model_payload,
    train,
)
from otsing.training.toy import make_toy_dataset

log = logging.getLogger(__name__)

# ── Constants ────────────────────────────────────────────────────────────────

# Sub-stream tags under the run seed. Changing one changes that stage's output.
TAG_DATA = 1
TAG_SOLVE = 2
TAG_OTIS = 3
TAG_RANB = 4
TAG_INTERP = 5

ARTIFACTS = (
    "offsets.json",
    "boundaries.json",
    "otis.otpc",
    "model.json",
    "report.json",
    "history.csv",
    "resolved-config.json",
)
SWEEP_HEADER = ["mode", "rho", "ood_mmc", "id_acc"]


# ── Data model ───────────────────────────────────────────────────────────────


@dataclass(frozen=True, eq=False)
class Inputs:
    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    ood_x: np.ndarray

    @property
    def n_classes(self) -> int:
        return max(int(self.train_y.max()), int(self.test_y.max())) + 1


@dataclass(frozen=True, eq=False)
class Partition:
    """A solved partition plus everything derived from its Monte Carlo pool."""

    cloud: PointCloud
    measure: BaseMeasure
    offsets: PotentialOffsets
    report: SolveReport | None
    stats: CellStats
    assignment: Assignment
    candidates: list[BoundaryRecord]


@dataclass(frozen=True, eq=False)
class Fit:
    model: ToyClassifier
    history: list[EpochRecord]
    report: ConfidenceReport
    summary: dict[str, float]


@dataclass(frozen=True)
class RunResult:
    out_dir: Path
    summary: dict


@dataclass(frozen=True)
class SweepRow:
    mode: SweepMode
    rho: float | None
    ood_mmc: float
    id_acc: float


# ── Stages ───────────────────────────────────────────────────────────────────


def load_inputs(config: RunConfig) -> Inputs:
    data = config.data
    if data.source == DataSource.TOY:
        ds = make_toy_dataset(config.toy, SeededRng(config.seed).derive(TAG_DATA).seed)
        return Inputs(ds.train_x, ds.train_y, ds.test_x, ds.test_y, ds.ood_x)
    train_x, _ = read_points(config.resolve(data.train_points))
    train_y = read_labels(config.resolve(data.train_labels), train_x.shape[0])
    ood_x, _ = read_points(config.resolve(data.ood_points))
    if data.test_points is None:
        log.warning("no test split configured; ID metrics are computed on the training inputs")
        test_x, test_y = train_x, train_y
    else:
        test_x, _ = read_points(config.resolve(data.test_points))
        test_y = read_labels(config.resolve(data.test_labels), test_x.shape[0])
    return Inputs(train_x, train_y, test_x, test_y, ood_x)


def write_inputs(inputs: Inputs, out_dir: Path) -> list[Path]:
    """Per-split OTPC and label files for the stage-by-stage commands."""
    return [
        write_otpc(out_dir / "train.otpc", inputs.train_x),
        write_labels(out_dir / "train-labels.csv", inputs.train_y),
        write_otpc(out_dir / "test.otpc", inputs.test_x),
        write_labels(out_dir / "test-labels.csv", inputs.test_y),
        write_otpc(out_dir / "ood.otpc", inputs.ood_x),
    ]


def solve_partition(config: RunConfig, cloud: PointCloud) -> Partition:
    """Solve the offsets, then estimate cells and candidates on the solver's own pool."""
    measure = config.base.build(cloud.points)
    offsets, report = optimize_offsets(cloud, measure, SeededRng(config.seed).derive(TAG_SOLVE), config.solver)
    if config.strict:
        require_converged(report, config.solver)
    return analyze_partition(config, cloud, offsets, report)


def analyze_partition(
    config: RunConfig,
    cloud: PointCloud,
    offsets: PotentialOffsets,
    report: SolveReport | None = None,
) -> Partition:
    """Cell statistics, assignment and candidate boundaries for fixed offsets.

    The Monte Carlo pool is the solver's first pool for the same seed.
    """
    measure = config.base.build(cloud.points)
    rng = SeededRng(config.seed).derive(TAG_SOLVE)
    pool = sample(measure, rng, config.solver.mc_samples)
    stats = estimate_cells(cloud, offsets, measure, rng, config.solver.mc_samples, samples=pool)
    assignment = assign(cloud, offsets, pool)
    candidates = candidate_boundaries(
        cloud, offsets, assignment, config.boundaries.mode, strict=config.boundaries.strict_scores
    )
    log.info("%d candidate boundaries (%s)", len(candidates), config.boundaries.mode)
    return Partition(cloud, measure, offsets, report, stats, assignment, candidates)


def synthesize(
    config: RunConfig,
    partition: Partition,
    codec: Codec,
    records: Sequence[BoundaryRecord],
    *,
    epoch: int | None = None,
) -> list[SynthesisSample]:
    tags = (TAG_OTIS,) if epoch is None else (TAG_OTIS, epoch)
    syn = config.synthesis
    return generate_otis(
        partition.cloud,
        partition.offsets,
        list(records),
        partition.stats,
        codec,
        partition.measure,
        SeededRng(config.seed).derive(*tags),
        syn.per_boundary,
        syn.slab,
        guard=syn.guard,
        retry_cap=syn.retry_cap,
    )


def regenerator(
    config: RunConfig,
    partition: Partition,
    codec: Codec,
    records: Sequence[BoundaryRecord],
) -> Callable[[int], np.ndarray] | None:
    if not config.train.regenerate_every:
        return None
    return lambda epoch: stack_outputs(synthesize(config, partition, codec, records, epoch=epoch))


def fit_and_score(
    config: RunConfig,
    inputs: Inputs,
    otis_x: np.ndarray | None,
    *,
    otis_source: Callable[[int], np.ndarray] | None = None,
    ood_weight: float | None = None,
) -> Fit:
    train_cfg = config.train if ood_weight is None else replace(config.train, ood_weight=ood_weight)
    model = init_classifier(inputs.train_x.shape[1], inputs.n_classes, train_cfg.hidden, train_cfg.seed)
    model, history = train(
        model,
        inputs.train_x,
        inputs.train_y,
        otis_x,
        train_cfg,
        test=(inputs.test_x, inputs.test_y),
        otis_source=otis_source,
    )
    report = confidence_report(model, inputs.test_x, inputs.test_y, inputs.ood_x)
    return Fit(model, history, report, summarize(report, config.metrics))


def history_rows(history: Sequence[EpochRecord]) -> list[tuple]:
    return [(r.epoch, r.ce_loss, r.sup_loss, r.id_train_acc, r.id_test_acc) for r in history]


# ── Orchestration ────────────────────────────────────────────────────────────


def run_pipeline(config: RunConfig, out_dir: str | Path | None = None) -> RunResult:
    """solve -> boundaries -> synthesize -> train -> evaluate, writing every artifact."""
    if config.threads is not None:
        set_threads(config.threads)
    if out_dir is not None:
        config = with_overrides(config, out_dir=out_dir)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "resolved-config.json", resolved_config(config))

    with at_stage("load"):
        inputs = load_inputs(config)
        codec = parse_codec(config.synthesis.codec)
        cloud = PointCloud.from_arrays(codec.encode(inputs.train_x))

    with at_stage("solve"):
        partition = solve_partition(config, cloud)
        write_json(
            out / "offsets.json",
            offsets_payload(
                partition.offsets.h,
                partition.report.final_energy,
                config.seed,
                converged=partition.report.converged,
                iterations=partition.report.iterations,
            ),
        )

    with at_stage("boundaries"):
        singular = select_singular(partition.candidates, config.boundaries.rho)
        write_json(out / "boundaries.json", boundary_payload(singular.records))

    with at_stage("synthesize"):
        samples = synthesize(config, partition, codec, singular.records)
        otis_x = stack_outputs(samples)
        write_otpc(out / "otis.otpc", otis_x)
        write_json(out / "otis.json", otis_payload(samples))

    with at_stage("train"):
        fit = fit_and_score(
            config, inputs, otis_x, otis_source=regenerator(config, partition, codec, singular.records)
        )
        write_json(out / "model.json", model_payload(fit.model))
        write_rows(out / "history.csv", HISTORY_HEADER, history_rows(fit.history))

    with at_stage("evaluate"):
        summary = {
            **fit.summary,
            "converged": partition.report.converged,
            "final_energy": partition.report.final_energy,
            "solver_iterations": partition.report.iterations,
            "n_candidates": len(partition.candidates),
            "n_singular": len(singular.records),
            "n_otis": int(otis_x.shape[0]),
        }
        write_json(out / "report.json", summary)
        write_rows(out / "hist.csv", HIST_HEADER, histogram_rows(fit.report, config.metrics.hist_bins))

    log.info("run finished: ood_mmc=%.4f id_accuracy=%.4f", summary["ood_mmc"], summary["id_accuracy"])
    return RunResult(out, summary)


def ablation_sweep(
    config: RunConfig,
    rhos: Sequence[float],
    modes: Sequence[SweepMode],
    out_path: str | Path | None = None,
) -> list[SweepRow]:
    """One trained model per (mode, rho) over a single shared solve.

    ``baseline`` ignores rho and contributes one row with an empty rho cell.
    """
    modes = [SweepMode(m) for m in modes]
    if config.threads is not None:
        set_threads(config.threads)
    rows: list[SweepRow] = []
    if modes:
        with at_stage("load"):
            inputs = load_inputs(config)
            codec = parse_codec(config.synthesis.codec)
            cloud = PointCloud.from_arrays(codec.encode(inputs.train_x))
        with at_stage("solve"):
            partition = solve_partition(config, cloud)
        seed = SeededRng(config.seed)
        per_boundary = config.synthesis.per_boundary

        for mode in modes:
            if mode == SweepMode.BASELINE:
                with at_stage("train"):
                    fit = fit_and_score(config, inputs, None, ood_weight=0.0)
                rows.append(SweepRow(mode, None, fit.summary["ood_mmc"], fit.summary["id_accuracy"]))
                continue
            for rho in rhos:
                count = fraction_count(rho, len(partition.candidates))
                source = None
                with at_stage("synthesize"):
                    if mode in (SweepMode.TOPK, SweepMode.RANB):
                        if mode == SweepMode.TOPK:
                            records = select_singular(partition.candidates, rho).records
                        else:
                            records = random_boundaries(partition.candidates, count, seed.derive(TAG_RANB, count))
                        otis_x = stack_outputs(synthesize(config, partition, codec, records))
                        source = regenerator(config, partition, codec, records)
                    else:
                        otis_x = interpolation_baselines(
                            cloud,
                            codec,
                            seed.derive(TAG_INTERP, count),
                            InterpolationMode(mode.value),
                            count * per_boundary,
                            inputs=inputs.train_x,
                        )
                with at_stage("train"):
                    fit = fit_and_score(config, inputs, otis_x, otis_source=source)
                log.info("sweep %s rho=%g: ood_mmc=%.4f", mode, rho, fit.summary["ood_mmc"])
                rows.append(SweepRow(mode, rho, fit.summary["ood_mmc"], fit.summary["id_accuracy"]))

    if out_path is not None:
        write_rows(out_path, SWEEP_HEADER, [(r.mode.value, r.rho, r.ood_mmc, r.id_acc) for r in rows])
    return rows
