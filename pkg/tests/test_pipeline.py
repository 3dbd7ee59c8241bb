"""End-to-end tests for run_pipeline and ablation_sweep on small configs."""

from __future__ import annotations

import csv
import json

import numpy as np
import pytest

from otsing.config import SweepMode, load_config
from otsing.errors import ConfigError
from otsing.formats import read_otpc
from otsing.pipeline import ARTIFACTS, SWEEP_HEADER, ablation_sweep, load_inputs, run_pipeline, write_inputs

REPORT_KEYS = {
    "id_mmc", "ood_mmc", "auroc", "fpr95", "ece", "id_accuracy", "id_error",
    "converged", "final_energy", "solver_iterations", "n_candidates", "n_singular", "n_otis",
}


def read_csv(path) -> list[list[str]]:
    with open(path, newline="") as f:
        return list(csv.reader(f))


# ── run_pipeline ─────────────────────────────────────────────────────────────


class TestRunPipeline:
    @pytest.fixture()
    def run(self, tmp_path, small_config):
        config = load_config(small_config())
        return config, run_pipeline(config, tmp_path / "out")

    def test_artifacts(self, run):
        _, result = run
        for name in (*ARTIFACTS, "otis.json", "hist.csv"):
            assert (result.out_dir / name).is_file(), name

    def test_report(self, run):
        _, result = run
        report = json.loads((result.out_dir / "report.json").read_text())
        assert set(report) == REPORT_KEYS
        assert report == result.summary
        assert 0.0 <= report["auroc"] <= 1.0
        assert report["n_otis"] == 4 * report["n_singular"]

    def test_otis_lie_on_their_segments(self, run):
        config, result = run
        y = load_inputs(config).train_x
        x, _ = read_otpc(result.out_dir / "otis.otpc")
        sidecar = json.loads((result.out_dir / "otis.json").read_text())
        assert len(sidecar) == x.shape[0] > 0
        for row, point in zip(sidecar, x):
            assert 0.0 <= row["lambda_i"] <= 1.0
            assert 0.0 <= row["lambda_j"] <= 1.0
            assert row["lambda_j"] == 1.0 - row["lambda_i"]
            expected = row["lambda_i"] * y[row["i"]] + row["lambda_j"] * y[row["j"]]
            assert np.array_equal(point, expected)

    def test_history(self, run):
        config, result = run
        rows = read_csv(result.out_dir / "history.csv")
        assert rows[0] == ["epoch", "ce_loss", "sup_loss", "id_train_acc", "id_test_acc"]
        assert [int(r[0]) for r in rows[1:]] == list(range(1, config.train.epochs + 1))

    def test_resolved_config(self, run):
        config, result = run
        doc = json.loads((result.out_dir / "resolved-config.json").read_text())
        assert doc["seed"] == config.seed
        assert doc["out_dir"] == str(result.out_dir)
        assert doc["synthesis"]["slab"] == "off"

    def test_rerun_is_byte_identical(self, run, tmp_path):
        config, first = run
        second = run_pipeline(config, tmp_path / "again")
        for name in (*ARTIFACTS, "otis.json", "hist.csv"):
            if name != "resolved-config.json":
                assert (first.out_dir / name).read_bytes() == (second.out_dir / name).read_bytes(), name
        a, b = (json.loads((r.out_dir / "resolved-config.json").read_text()) for r in (first, second))
        assert a.pop("out_dir") == str(tmp_path / "out")
        assert b.pop("out_dir") == str(tmp_path / "again")
        assert a == b

    def test_seed_changes_output(self, run, tmp_path, small_config):
        _, first = run
        other = run_pipeline(load_config(small_config(seed=4)), tmp_path / "other")
        assert (first.out_dir / "offsets.json").read_bytes() != (other.out_dir / "offsets.json").read_bytes()


class TestFileInputs:
    def test_runs_from_written_splits(self, tmp_path, small_config):
        toy = load_config(small_config())
        (tmp_path / "data").mkdir()
        write_inputs(load_inputs(toy), tmp_path / "data")
        config = load_config(
            small_config(
                data={
                    "source": "files",
                    "train_points": "data/train.otpc",
                    "train_labels": "data/train-labels.csv",
                    "test_points": "data/test.otpc",
                    "test_labels": "data/test-labels.csv",
                    "ood_points": "data/ood.otpc",
                }
            )
        )
        from_files = run_pipeline(config, tmp_path / "files")
        from_toy = run_pipeline(toy, tmp_path / "toy")
        # Same points, same seed: only the data source differs.
        assert (from_files.out_dir / "offsets.json").read_bytes() == (from_toy.out_dir / "offsets.json").read_bytes()

    def test_missing_split_names_load_stage(self, tmp_path, small_config):
        config = load_config(
            small_config(data={"source": "files", "train_points": "x.otpc", "train_labels": "y.csv",
                               "ood_points": "o.otpc"})
        )
        with pytest.raises(OSError) as info:
            run_pipeline(config, tmp_path / "out")
        assert info.value.stage == "load"


# ── ablation_sweep ───────────────────────────────────────────────────────────


class TestAblationSweep:
    def test_all_modes(self, tmp_path, small_config):
        config = load_config(small_config())
        out = tmp_path / "sweep.csv"
        modes = [SweepMode.TOPK, SweepMode.RANB, SweepMode.LATENT_INTERP, SweepMode.INPUT_INTERP, SweepMode.BASELINE]
        rows = ablation_sweep(config, [0.1, 0.25], modes, out)
        assert len(rows) == 9
        table = read_csv(out)
        assert table[0] == SWEEP_HEADER
        assert [(r[0], r[1]) for r in table[1:]] == [
            ("topk", "0.1"), ("topk", "0.25"),
            ("ranb", "0.1"), ("ranb", "0.25"),
            ("latent_interp", "0.1"), ("latent_interp", "0.25"),
            ("input_interp", "0.1"), ("input_interp", "0.25"),
            ("baseline", ""),
        ]
        for row in rows:
            assert 0.0 < row.ood_mmc <= 1.0
            assert 0.0 <= row.id_acc <= 1.0

    def test_topk_row_matches_run(self, tmp_path, small_config):
        config = load_config(small_config())
        row = ablation_sweep(config, [config.boundaries.rho], [SweepMode.TOPK])[0]
        result = run_pipeline(config, tmp_path / "out")
        assert row.ood_mmc == result.summary["ood_mmc"]
        assert row.id_acc == result.summary["id_accuracy"]

    def test_no_modes(self, tmp_path, small_config):
        out = tmp_path / "sweep.csv"
        assert ablation_sweep(load_config(small_config()), [0.1], [], out) == []
        assert read_csv(out) == [SWEEP_HEADER]

    def test_unknown_mode(self, small_config):
        with pytest.raises(ValueError):
            ablation_sweep(load_config(small_config()), [0.1], ["mixup"])


def test_bad_rho_is_config_error(small_config):
    with pytest.raises(ConfigError):
        load_config(small_config(sweep={"rhos": [0.0]}))
