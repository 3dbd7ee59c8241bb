from __future__ import annotations

from collections.abc import Iterator
from contextlib import contextmanager
from dataclasses import replace
from pathlib import Path
from typing import Optional

import typer

from otsing.config import RunConfig, SweepMode, load_config, with_overrides
from otsing.errors import ConfigError, OtsingError
from otsing.formats import (
    boundary_payload,
    offsets_payload,
    otis_payload,
    read_boundaries,
    read_json,
    read_labels,
    read_offsets,
    read_otpc,
    read_points,
    write_json,
    write_otpc,
    write_rows,
)
from otsing.logs import configure_logging
from otsing.metrics import HIST_HEADER, confidence_report, histogram_rows, summarize
from otsing.parallel import get_threads, resolve_threads, set_threads
from otsing.pipeline import (
    TAG_DATA,
    TAG_SOLVE,
    Inputs,
    ablation_sweep,
    analyze_partition,
    history_rows,
    run_pipeline,
    synthesize as synthesize_otis,
    write_inputs,
)
from otsing.sdot import (
    AdjacencyMode,
    PointCloud,
    PotentialOffsets,
    SeededRng,
    optimize_offsets,
    records_from_payload,
    require_converged,
    select_singular,
)
from otsing.synthesis import parse_codec, stack_outputs
from otsing.training import (
    HISTORY_HEADER,
    init_classifier,
    model_from_payload,
    model_payload,
    train,
)
from otsing.training.toy import make_toy_dataset

app = typer.Typer(help="otsing: OT partitions, boundary-induced OOD samples and confidence suppression.")

_globals: dict[str, object] = {"seed": None, "strict": None, "threads": None}


# ── Error reporting ──────────────────────────────────────────────────────────


def _fail(kind: str, stage: str, message: str, code: int) -> None:
    text = " ".join(str(message).split()).replace('"', "'")
    typer.echo(f'error={kind} stage={stage} msg="{text}"', err=True)
    raise typer.Exit(code)


@contextmanager
def _guard(stage: str) -> Iterator[None]:
    """Map toolkit errors to one diagnostic line and the matching exit status."""
    try:
        yield
    except OtsingError as e:
        _fail(e.kind, getattr(e, "stage", None) or stage, str(e), e.exit_code)
    except OSError as e:
        _fail("io", getattr(e, "stage", None) or stage, str(e), 2)


# ── Helpers ──────────────────────────────────────────────────────────────────


def _config(path: Optional[Path], out_dir: Optional[Path] = None) -> RunConfig:
    """Load a config and fold in the global flags."""
    config = load_config(path) if path is not None else RunConfig()
    # --threads, then the config file, then $OTSING_THREADS
    threads = _globals["threads"]
    if threads is None:
        threads = config.threads if config.threads is not None else get_threads()
    set_threads(threads)
    return with_overrides(
        config, seed=_globals["seed"], strict=_globals["strict"], threads=threads, out_dir=out_dir
    )


def _cloud(path: Path) -> PointCloud:
    points, weights = read_points(path)
    return PointCloud.from_arrays(points, weights)


def _offsets(path: Path, cloud: PointCloud) -> PotentialOffsets:
    return PotentialOffsets(read_offsets(path, cloud.n))


def _floats(text: str, flag: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"{flag} must be a comma-separated list of numbers, got '{text}'") from None


def _modes(text: str) -> list[SweepMode]:
    modes = []
    for name in (v.strip().lower() for v in text.split(",")):
        if not name:
            continue
        try:
            modes.append(SweepMode(name))
        except ValueError:
            allowed = ", ".join(m.value for m in SweepMode)
            raise ConfigError(f"Unknown sweep mode '{name}'. Available: {allowed}") from None
    return modes


def _slab(text: Optional[str], default):
    if text is None:
        return default
    if text in ("auto", "off"):
        return text
    try:
        value = float(text)
    except ValueError:
        raise ConfigError(f"--slab must be auto, off or a number, got '{text}'") from None
    if not value > 0:
        raise ConfigError(f"--slab must be > 0, got {value}")
    return value


# ── Global options ───────────────────────────────────────────────────────────


@app.callback()
def main(
    seed: Optional[int] = typer.Option(None, "--seed", help="Override the run seed (also reseeds training)"),
    threads: Optional[int] = typer.Option(None, "--threads", help="Worker threads (default: $OTSING_THREADS or 1)"),
    strict: bool = typer.Option(False, "--strict", help="Fail with exit 3 if the solver does not converge"),
    verbose: int = typer.Option(0, "--verbose", "-v", count=True, help="-v for progress, -vv for debug"),
):
    """Semi-discrete OT toolkit: solve, find singular boundaries, synthesize OTIS, train, evaluate."""
    configure_logging(verbose)
    _globals["seed"] = seed
    _globals["strict"] = True if strict else None
    _globals["threads"] = threads
    with _guard("cli"):
        set_threads(resolve_threads(threads))


# ── Stage commands ───────────────────────────────────────────────────────────


@app.command()
def solve(
    points: Path = typer.Option(..., "--points", help="Target cloud (OTPC or CSV)"),
    config: Optional[Path] = typer.Option(None, "--config", help="Run config JSON (base and solver blocks)"),
    out: Path = typer.Option(Path("offsets.json"), "--out", "-o", help="Offsets JSON to write"),
):
    """Optimize the potential offsets h for a target cloud."""
    with _guard("solve"):
        cfg = _config(config)
        cloud = _cloud(points)
        measure = cfg.base.build(cloud.points)
        offsets, report = optimize_offsets(cloud, measure, SeededRng(cfg.seed).derive(TAG_SOLVE), cfg.solver)
        if cfg.strict:
            require_converged(report, cfg.solver)
        write_json(
            out,
            offsets_payload(
                offsets.h, report.final_energy, cfg.seed, converged=report.converged, iterations=report.iterations
            ),
        )
    status = "converged" if report.converged else "NOT converged"
    typer.echo(f"Wrote {cloud.n} offsets to {out} ({status}, E={report.final_energy:.3e})", err=True)


@app.command()
def boundaries(
    points: Path = typer.Option(..., "--points", help="Target cloud (OTPC or CSV)"),
    offsets: Path = typer.Option(..., "--offsets", help="Offsets JSON from 'solve'"),
    mode: Optional[AdjacencyMode] = typer.Option(None, "--mode", help="allpairs or empirical"),
    rho: Optional[float] = typer.Option(None, "--rho", help="Fraction of top-scored boundaries to keep"),
    config: Optional[Path] = typer.Option(None, "--config", help="Run config JSON"),
    out: Path = typer.Option(Path("boundaries.json"), "--out", "-o", help="Boundaries JSON to write"),
):
    """Score candidate boundaries and keep the top rho fraction."""
    with _guard("boundaries"):
        cfg = _config(config)
        cloud = _cloud(points)
        if mode is not None:
            cfg = replace(cfg, boundaries=replace(cfg.boundaries, mode=mode))
        partition = analyze_partition(cfg, cloud, _offsets(offsets, cloud))
        singular = select_singular(partition.candidates, rho if rho is not None else cfg.boundaries.rho)
        write_json(out, boundary_payload(singular.records))
    typer.echo(
        f"Wrote {len(singular.records)} of {len(partition.candidates)} boundaries to {out}", err=True
    )


@app.command()
def synthesize(
    points: Path = typer.Option(..., "--points", help="Target (latent) cloud"),
    offsets: Path = typer.Option(..., "--offsets", help="Offsets JSON from 'solve'"),
    boundaries_path: Path = typer.Option(..., "--boundaries", help="Boundaries JSON from 'boundaries'"),
    codec: Optional[str] = typer.Option(None, "--codec", help="identity | affine:<json> | external:<dir>"),
    per_boundary: Optional[int] = typer.Option(None, "--per-boundary", help="Samples per boundary"),
    slab: Optional[str] = typer.Option(None, "--slab", help="auto | off | <half-width>"),
    config: Optional[Path] = typer.Option(None, "--config", help="Run config JSON"),
    out: Path = typer.Option(Path("otis.otpc"), "--out", "-o", help="OTPC file of decoded samples"),
):
    """Synthesize OTIS along the given boundaries; writes a sidecar JSON next to --out."""
    with _guard("synthesize"):
        cfg = _config(config)
        syn = replace(
            cfg.synthesis,
            codec=codec if codec is not None else cfg.synthesis.codec,
            per_boundary=per_boundary if per_boundary is not None else cfg.synthesis.per_boundary,
            slab=_slab(slab, cfg.synthesis.slab),
        )
        cfg = replace(cfg, synthesis=syn)
        cloud = _cloud(points)
        partition = analyze_partition(cfg, cloud, _offsets(offsets, cloud))
        records = records_from_payload(read_boundaries(boundaries_path), cloud, partition.offsets)
        samples = synthesize_otis(cfg, partition, parse_codec(syn.codec), records)
        write_otpc(out, stack_outputs(samples))
        sidecar = write_json(out.with_suffix(".json"), otis_payload(samples))
    typer.echo(f"Wrote {len(samples)} OTIS to {out} (sidecar {sidecar})", err=True)


@app.command("train-toy")
def train_toy(
    id_points: Path = typer.Option(..., "--id", help="ID training inputs (OTPC or CSV)"),
    labels: Path = typer.Option(..., "--labels", help="Labels CSV for --id"),
    otis: Optional[Path] = typer.Option(None, "--otis", help="OTIS inputs; omit for plain cross-entropy"),
    test_points: Optional[Path] = typer.Option(None, "--test", help="ID test inputs"),
    test_labels: Optional[Path] = typer.Option(None, "--test-labels", help="Labels CSV for --test"),
    config: Optional[Path] = typer.Option(None, "--config", help="Run config JSON (train block)"),
    out: Path = typer.Option(Path("model.json"), "--out", "-o", help="Model JSON to write"),
    history: Path = typer.Option(Path("history.csv"), "--history", help="Per-epoch history CSV"),
):
    """Train the toy classifier on 50% ID / 50% OTIS batches."""
    with _guard("train"):
        cfg = _config(config)
        if (test_points is None) != (test_labels is None):
            raise ConfigError("--test and --test-labels must be given together")
        x, _ = read_points(id_points)
        y = read_labels(labels, x.shape[0])
        test = None
        if test_points is not None:
            tx, _ = read_points(test_points)
            test = (tx, read_labels(test_labels, tx.shape[0]))
        otis_x = read_otpc(otis)[0] if otis is not None else None
        n_classes = int(max(y.max(), test[1].max() if test else 0)) + 1
        model = init_classifier(x.shape[1], n_classes, cfg.train.hidden, cfg.train.seed)
        model, records = train(model, x, y, otis_x, cfg.train, test=test)
        write_json(out, model_payload(model))
        write_rows(history, HISTORY_HEADER, history_rows(records))
    final = f", train acc {records[-1].id_train_acc:.3f}" if records else ""
    typer.echo(f"Wrote model to {out} and {len(records)} epochs to {history}{final}", err=True)


@app.command()
def evaluate(
    model_path: Path = typer.Option(..., "--model", help="Model JSON from 'train-toy'"),
    id_points: Path = typer.Option(..., "--id", help="ID inputs"),
    labels: Path = typer.Option(..., "--labels", help="Labels CSV for --id"),
    ood: Path = typer.Option(..., "--ood", help="OOD inputs"),
    config: Optional[Path] = typer.Option(None, "--config", help="Run config JSON (metrics block)"),
    out: Path = typer.Option(Path("report.json"), "--out", "-o", help="Report JSON to write"),
    hist: Optional[Path] = typer.Option(None, "--hist", help="Confidence histogram CSV"),
):
    """MMC, AUROC, FPR95, ECE and accuracy of a trained model."""
    with _guard("evaluate"):
        cfg = _config(config)
        model = model_from_payload(read_json(model_path), str(model_path))
        x, _ = read_points(id_points)
        y = read_labels(labels, x.shape[0])
        ood_x, _ = read_points(ood)
        report = confidence_report(model, x, y, ood_x)
        summary = summarize(report, cfg.metrics)
        write_json(out, summary)
        if hist is not None:
            write_rows(hist, HIST_HEADER, histogram_rows(report, cfg.metrics.hist_bins))
    typer.echo(
        f"ID MMC {summary['id_mmc']:.4f}  OOD MMC {summary['ood_mmc']:.4f}  "
        f"AUROC {summary['auroc']:.4f}  FPR95 {summary['fpr95']:.4f}",
        err=True,
    )


# ── Orchestration ────────────────────────────────────────────────────────────


@app.command()
def run(
    config: Path = typer.Argument(..., help="Run config JSON"),
    out_dir: Optional[Path] = typer.Option(None, "--out-dir", "-o", help="Artifact directory (default: config out_dir)"),
):
    """Run every stage end to end and write all artifacts."""
    with _guard("config"):
        cfg = _config(config, out_dir)
    with _guard("run"):
        result = run_pipeline(cfg)
    s = result.summary
    typer.echo(
        f"Artifacts in {result.out_dir}: OOD MMC {s['ood_mmc']:.4f}, ID accuracy {s['id_accuracy']:.4f}",
        err=True,
    )


@app.command()
def sweep(
    config: Path = typer.Argument(..., help="Run config JSON"),
    rho: Optional[str] = typer.Option(None, "--rho", help="Comma-separated fractions, e.g. '0.05,0.1'"),
    modes: Optional[str] = typer.Option(None, "--modes", help="Comma-separated: topk,ranb,latent_interp,input_interp,baseline"),
    out: Path = typer.Option(Path("sweep.csv"), "--out", "-o", help="Sweep CSV to write"),
):
    """Compare boundary selection strategies over one shared solve."""
    with _guard("config"):
        cfg = _config(config)
        rhos = _floats(rho, "--rho") if rho is not None else list(cfg.sweep.rhos)
        bad = [r for r in rhos if not 0 < r <= 1]
        if bad:
            raise ConfigError(f"--rho values must lie in (0, 1], got {bad}")
        mode_list = _modes(modes) if modes is not None else list(cfg.sweep.modes)
    with _guard("sweep"):
        rows = ablation_sweep(cfg, rhos, mode_list, out)
    typer.echo(f"Wrote {len(rows)} sweep rows to {out}", err=True)


@app.command("toy-data")
def toy_data(
    config: Optional[Path] = typer.Option(None, "--config", help="Run config JSON (toy block)"),
    out_dir: Path = typer.Option(..., "--out-dir", "-o", help="Directory for the generated files"),
):
    """Write the toy train/test/OOD splits as OTPC files and label CSVs."""
    with _guard("toy-data"):
        cfg = _config(config)
        ds = make_toy_dataset(cfg.toy, SeededRng(cfg.seed).derive(TAG_DATA).seed)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = write_inputs(Inputs(ds.train_x, ds.train_y, ds.test_x, ds.test_y, ds.ood_x), out_dir)
    typer.echo(f"Wrote {len(paths)} files to {out_dir}", err=True)
