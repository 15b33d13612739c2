#!/usr/bin/env python

import csv
import dataclasses
import json
import re
import shutil
import tempfile
from pathlib import Path

import numpy as np
import pytest

from pfrlab import harness
from pfrlab.config import ExperimentConfig
from pfrlab.errors import EFIT, EMETRICS, StageError
from pfrlab.figures import _cell_color, bar_chart, heatmap, line_chart
from pfrlab.harness import (
    ARMS,
    COMPARISON_COLUMNS,
    MANIFEST_NAME,
    N_SIGMA_COLUMNS,
    Manifest,
    emit_reports,
    git_revision,
    repetition_noise,
    repetition_seeds,
    replay,
    run_experiment,
    stage,
)
from pfrlab.noise_sim import DriftConfig, NoiseConfig

CELL = re.compile(r'<rect class="cell" data-row="(\d)" data-col="(\d)"[^>]* fill="([^"]+)"')


def tiny_config(output_dir, **changes):
    settings = {
        "l_max": 4,
        "shots_per_sequence": 200,
        "n_randomizations": 200,
        "interleave_block": 10,
        "repetitions": 1,
        "noise": NoiseConfig(),
        "bootstrap_resamples": 0,
        "workers": 1,
        "output_dir": str(output_dir),
    }
    settings.update(changes)
    return ExperimentConfig(**settings)


@pytest.fixture(scope="module")
def ideal_run():
    """one zero-noise repetition, shared by the read-only checks below"""
    out = tempfile.mkdtemp(prefix="pfrlab_test_")
    try:
        yield run_experiment(tiny_config(Path(out) / "run"))
    finally:
        shutil.rmtree(out, ignore_errors=True)


class TestSeeds:
    """
    Per-repetition seeds and drift
    """

    def test_repetition_seeds(self):
        """seeds are reproducible from the master seed and distinct"""
        seeds = repetition_seeds(7, 5)
        assert seeds == repetition_seeds(7, 5)
        assert len(set(seeds)) == 5
        assert repetition_seeds(7, 3) == seeds[:3]

    def test_repetition_noise(self, managed_temp_dir):
        """every repetition walks its own drift path"""
        drift = DriftConfig(kind="random-walk", amplitude=0.05, period=100, seed=2)
        config = tiny_config(managed_temp_dir, noise=NoiseConfig(drift=drift))
        assert repetition_noise(config, 0).drift.seed == 2
        assert repetition_noise(config, 3).drift.seed == 5
        assert repetition_noise(config, 3).overrotation_eps == config.noise.overrotation_eps

    def test_git_revision_outside_checkout(self, managed_temp_dir):
        """no checkout, no revision"""
        assert git_revision(managed_temp_dir) is None


class TestStage:
    """
    Stage bookkeeping and failure handling
    """

    def test_success_is_recorded(self, managed_temp_dir):
        """finished stages land in the manifest"""
        manifest = Manifest(tiny_config(managed_temp_dir), managed_temp_dir, [1])
        with stage("design", manifest):
            pass
        assert manifest.data["stages"][0]["stage"] == "design"

    def test_failure_writes_partial_manifest(self, managed_temp_dir):
        """a failing stage writes the manifest and raises StageError with its exit code"""
        manifest = Manifest(tiny_config(managed_temp_dir), managed_temp_dir, [1])
        with pytest.raises(StageError) as excinfo:
            with stage("fit", manifest, 0):
                raise ValueError("boom")
        assert excinfo.value.exit_code == EFIT
        with open(excinfo.value.manifest_path) as f:
            data = json.load(f)
        assert data["status"] == "failed"
        assert data["failed_stage"] == "fit"
        assert "boom" in data["error"]

    def test_unexpected_exception(self, managed_temp_dir):
        """any exception from a stage writes the partial manifest and becomes StageError"""
        manifest = Manifest(tiny_config(managed_temp_dir), managed_temp_dir, [1])
        with pytest.raises(StageError) as excinfo:
            with stage("metrics", manifest, 0):
                raise RuntimeError("worker died")
        assert excinfo.value.exit_code == EMETRICS
        assert isinstance(excinfo.value.cause, RuntimeError)
        with open(excinfo.value.manifest_path) as f:
            data = json.load(f)
        assert data["status"] == "failed"
        assert data["failed_stage"] == "metrics"
        assert data["error"] == "RuntimeError: worker died"

    def test_interrupt(self, managed_temp_dir):
        """interrupts are recorded and re-raised"""
        manifest = Manifest(tiny_config(managed_temp_dir), managed_temp_dir, [1])
        with pytest.raises(KeyboardInterrupt):
            with stage("simulate", manifest, 0):
                raise KeyboardInterrupt()
        with open(Path(managed_temp_dir) / MANIFEST_NAME) as f:
            assert json.load(f)["status"] == "interrupted"

    def test_run_failure(self, managed_temp_dir, monkeypatch):
        """a failing fit stops the run with a partial manifest on disk"""

        def broken_fit(self, dataset, seed=None):
            raise ValueError("no convergence")

        monkeypatch.setattr(harness.GstEstimator, "fit", broken_fit)
        config = tiny_config(Path(managed_temp_dir) / "run", l_max=1)
        with pytest.raises(StageError) as excinfo:
            run_experiment(config)
        assert excinfo.value.stage == "fit"
        with open(Path(config.output_dir) / MANIFEST_NAME) as f:
            data = json.load(f)
        assert data["status"] == "failed"
        assert [s["stage"] for s in data["stages"]] == ["design", "simulate"]

    def test_run_failure_in_metrics(self, managed_temp_dir, monkeypatch):
        """a KeyError in the metrics stage still leaves a partial manifest"""

        def broken_metrics(model, **kwargs):
            raise KeyError("Gi")

        monkeypatch.setattr(harness, "metrics_report", broken_metrics)
        config = tiny_config(Path(managed_temp_dir) / "run", l_max=1)
        with pytest.raises(StageError) as excinfo:
            run_experiment(config)
        assert excinfo.value.stage == "metrics"
        with open(Path(config.output_dir) / MANIFEST_NAME) as f:
            data = json.load(f)
        assert data["status"] == "failed"
        assert data["failed_stage"] == "metrics"
        assert [s["stage"] for s in data["stages"]] == ["design", "simulate", "fit"]


class TestIdealRun:
    """
    A zero-noise run through every stage
    """

    def test_manifest(self, ideal_run):
        """the manifest lists the config digest, seeds and every written file"""
        with open(ideal_run.output_dir / MANIFEST_NAME) as f:
            data = json.load(f)
        assert data["status"] == "complete"
        assert data["config_digest"] == ideal_run.config.digest()
        assert data["repetition_seeds"] == repetition_seeds(0, 1)
        assert data["norm_convention"] == "full"
        for name in data["files"]:
            assert (ideal_run.output_dir / name).exists()

    def test_shot_totals(self, ideal_run):
        """both arms see every sequence with the configured shots"""
        rep = ideal_run.repetitions[0]
        for arm in ARMS:
            dataset = rep.datasets[arm]
            assert len(dataset) == len(ideal_run.design)
            assert dataset.total_shots == len(ideal_run.design) * 200

    def test_n_sigma_table(self, ideal_run):
        """one row per repetition, arm and hypothesis; no evidence against either model"""
        with open(ideal_run.output_dir / "n_sigma.csv") as f:
            rows = list(csv.DictReader(f))
        assert tuple(rows[0]) == N_SIGMA_COLUMNS
        assert len(rows) == 1 * 2 * 2
        assert {(r["arm"], r["hypothesis"]) for r in rows} == {(a.value, h) for a in ARMS for h in ("h1", "h2")}
        for row in rows:
            assert float(row["n_sigma"]) <= 3.0

    def test_reconstruction(self, ideal_run):
        """both arms reconstruct the target gates"""
        rep = ideal_run.repetitions[0]
        for arm in ARMS:
            for label, g in rep.metrics[arm].gates.items():
                assert g.diamond <= 1e-2, (arm, label)

    def test_comparison_table(self, ideal_run):
        """the arm comparison has one row per repetition"""
        with open(ideal_run.output_dir / "comparison.csv") as f:
            rows = list(csv.DictReader(f))
        assert tuple(rows[0]) == COMPARISON_COLUMNS
        assert len(rows) == 1

    def test_gi_heatmap(self, ideal_run):
        """the Gi heatmap is close to the identity: red diagonal, pale off-diagonal"""
        svg = (ideal_run.output_dir / "gi_ptm_randomized.svg").read_text()
        cells = {(int(i), int(j)): fill for i, j, fill in CELL.findall(svg)}
        assert len(cells) == 16
        for (i, j), fill in cells.items():
            r, g, b = (int(v) for v in re.findall(r"\d+", fill))
            if i == j:
                assert r == 255 and g < 40
            else:
                assert min(r, g, b) > 200

    def test_per_repetition_files(self, ideal_run):
        """datasets, models, fit reports and metrics per arm"""
        rep_dir = ideal_run.output_dir / "rep_00"
        for arm in ARMS:
            for name in ("dataset_{}.csv", "model_h1_{}.json", "model_h2_{}.json", "fit_report_{}.json", "metrics_{}.json"):
                assert (rep_dir / name.format(arm.value)).exists()

    def test_emit_reports_again(self, ideal_run, managed_temp_dir):
        """reports written from the same artifacts elsewhere are identical"""
        copy = dataclasses.replace(ideal_run, output_dir=Path(managed_temp_dir), files=[])
        files = emit_reports(copy)
        assert copy.files == files
        for name in ("n_sigma.csv", "metrics.csv", "comparison.csv", "gi_ptm_plain.svg"):
            assert (Path(managed_temp_dir) / name).read_bytes() == (ideal_run.output_dir / name).read_bytes()

    def test_replay(self, ideal_run, managed_temp_dir):
        """replaying the manifest reproduces the tables byte for byte"""
        again = replay(ideal_run.output_dir / MANIFEST_NAME, Path(managed_temp_dir) / "replay")
        for name in ("n_sigma.csv", "metrics.csv", "comparison.csv", "rep_00/dataset_plain.csv", "rep_00/dataset_randomized.csv"):
            assert (again.output_dir / name).read_bytes() == (ideal_run.output_dir / name).read_bytes()


class TestFigures:
    """
    SVG figure writers
    """

    def test_cell_colors(self):
        """+1 is full red, 0 white, -1 full blue"""
        assert _cell_color(1.0, 1.0) == "rgb(255,0,0)"
        assert _cell_color(0.0, 1.0) == "rgb(255,255,255)"
        assert _cell_color(-1.0, 1.0) == "rgb(0,0,255)"
        assert _cell_color(5.0, 0.0) == "rgb(255,255,255)"

    def test_heatmap_cells(self, managed_temp_dir):
        """one annotated cell per matrix entry"""
        path = heatmap(np.eye(4), Path(managed_temp_dir) / "eye.svg", title="identity")
        cells = CELL.findall(path.read_text())
        assert len(cells) == 16
        assert dict(((int(i), int(j)), fill) for i, j, fill in cells)[(2, 2)] == "rgb(255,0,0)"

    def test_charts(self, managed_temp_dir):
        """line and bar charts are well-formed SVG documents, NaN values skipped"""
        line = line_chart({"H1 plain": [3.0, float("nan"), 5.0]}, Path(managed_temp_dir) / "line.svg", title="<N>")
        bars = bar_chart({"Gi": {"plain": 0.1, "randomized": 0.01}}, Path(managed_temp_dir) / "bars.svg")
        for path in (line, bars):
            text = path.read_text()
            assert text.startswith("<svg") and text.rstrip().endswith("</svg>")
        assert "&lt;N&gt;" in line.read_text()
