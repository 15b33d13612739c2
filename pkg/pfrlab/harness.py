"""
End-to-end experiment: design, interleaved randomized/plain sampling over a shared drift
clock, H0/H1/H2 fits per arm, metrics with bootstrap intervals, and report files.
"""

import csv
import dataclasses
import json
import logging
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from datetime import UTC, datetime
from importlib import metadata
from pathlib import Path

import humanize
import numpy as np
import sh

from . import figures
from .config import ExperimentConfig
from .errors import ConfigError, StageError
from .estimation import GstEstimator
from .gst_design import save_design, standard_design, write_circuit_list
from .metrics import NORM_CONVENTION, metrics_report
from .noise_sim import InterleaveSchedule, Mode, sample_datasets

logger = logging.getLogger(__name__)

ARMS = (Mode.RANDOMIZED, Mode.PLAIN)
HYPOTHESES = ("h1", "h2")
ORDERING = "round/mode/sequence/shot"
MANIFEST_NAME = "manifest.json"
N_SIGMA_COLUMNS = ("repetition", "arm", "hypothesis", "n_sigma", "p_value", "logl", "dof", "logl_h0", "dof_h0")
METRICS_COLUMNS = ("repetition", "arm", "gate", "infidelity", "diamond", "ci_lo", "ci_hi", "infidelity_ci_lo", "infidelity_ci_hi")
COMPARISON_COLUMNS = ("repetition", "ratio_h1", "ratio_h2", "gi_outside_ci_randomized", "gi_outside_ci_plain")


def _now():
    return datetime.now(UTC).isoformat(timespec="seconds")


def git_revision(cwd=None):
    """HEAD of the enclosing git checkout, or None outside one"""
    try:
        return str(sh.git("rev-parse", "HEAD", _cwd=cwd or Path.cwd(), _tty_out=False)).strip() or None
    except (sh.ErrorReturnCode, sh.CommandNotFound, OSError):
        return None


def package_version():
    try:
        return metadata.version("pfrlab")
    except metadata.PackageNotFoundError:
        return "unknown"


def repetition_seeds(master_seed, repetitions):
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(master_seed).spawn(repetitions)]


def repetition_noise(config, repetition):
    """Each repetition walks its own drift path; sinusoidal drift restarts its phase"""
    drift = dataclasses.replace(config.noise.drift, seed=config.noise.drift.seed + repetition)
    return dataclasses.replace(config.noise, drift=drift)


@dataclass
class Repetition:
    index: int
    seed: int
    datasets: dict = field(default_factory=dict)
    fits: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)

    def n_sigma(self, arm, hypothesis):
        return getattr(self.fits[arm].report, f"n_sigma_{hypothesis}")

    def ratio(self, hypothesis):
        """N_sigma(plain) / N_sigma(randomized), the randomized value floored at 1"""
        return self.n_sigma(Mode.PLAIN, hypothesis) / max(self.n_sigma(Mode.RANDOMIZED, hypothesis), 1.0)

    def gi_outside_ci(self, arm):
        return len(self.metrics[arm].offdiagonal_outside_ci("Gi"))


class Manifest:
    """Provenance record written next to the outputs, also on failure"""

    def __init__(self, config, output_dir, seeds):
        self.path = Path(output_dir) / MANIFEST_NAME
        self.data = {
            "pfrlab_version": package_version(),
            "git_revision": git_revision(),
            "config": config.to_dict(),
            "config_digest": config.digest(),
            "master_seed": config.master_seed,
            "repetition_seeds": seeds,
            "ordering": ORDERING,
            "schedule": InterleaveSchedule(block=config.interleave_block).to_dict(),
            "norm_convention": NORM_CONVENTION,
            "started": _now(),
            "finished": None,
            "status": "running",
            "stages": [],
            "files": [],
        }

    def record(self, stage, repetition, seconds, **extra):
        self.data["stages"].append({"stage": stage, "repetition": repetition, "seconds": round(seconds, 3), **extra})

    def write(self, status=None, **extra):
        if status:
            self.data["status"] = status
        self.data.update(extra)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "w") as f:
            json.dump(self.data, f, indent=1, default=str)
        return self.path


@dataclass
class RunArtifacts:
    config: ExperimentConfig
    output_dir: Path
    design: object
    repetitions: list
    manifest: Manifest
    files: list = field(default_factory=list)

    def summary(self):
        return [
            {
                "repetition": rep.index,
                "ratio_h1": rep.ratio("h1"),
                "ratio_h2": rep.ratio("h2"),
                "gi_outside_ci_randomized": rep.gi_outside_ci(Mode.RANDOMIZED),
                "gi_outside_ci_plain": rep.gi_outside_ci(Mode.PLAIN),
            }
            for rep in self.repetitions
        ]


@contextmanager
def stage(name, manifest, repetition=None):
    """Time a pipeline stage; failures write the partial manifest and become StageError"""
    started = time.monotonic()
    try:
        yield
    except KeyboardInterrupt:
        manifest.write(status="interrupted", failed_stage=name, finished=_now())
        raise
    except StageError:
        raise
    except Exception as e:
        path = manifest.write(status="failed", failed_stage=name, error=f"{type(e).__name__}: {e}", finished=_now())
        logger.error("stage '%s' failed: %s", name, e)
        logger.debug("stage '%s' traceback", name, exc_info=True)
        raise StageError(name, e, path) from e
    seconds = time.monotonic() - started
    manifest.record(name, repetition, seconds)
    logger.debug("stage %s finished in %s", name, humanize.precisedelta(seconds, minimum_unit="milliseconds"))


def run_repetition(config, design, index, seed, manifest):
    rep = Repetition(index, seed)
    schedule = InterleaveSchedule(block=config.interleave_block, modes=ARMS)
    with stage("simulate", manifest, index):
        rep.datasets = sample_datasets(
            design.sequences,
            config.shots_per_sequence,
            repetition_noise(config, index),
            config.spam,
            seed,
            schedule=schedule,
            n_randomizations=config.n_randomizations,
            policy=config.frame_policy,
        )
        for dataset in rep.datasets.values():
            dataset.metadata["config_digest"] = config.digest()
            dataset.metadata["repetition"] = index
    expected = schedule.total_shots(len(design), config.shots_per_sequence)
    if sum(d.total_shots for d in rep.datasets.values()) != expected:
        raise StageError("simulate", f"shot count mismatch (expected {expected})", manifest.write(status="failed"))

    estimator = GstEstimator(design)
    for arm in ARMS:
        with stage("fit", manifest, index):
            rep.fits[arm] = estimator.fit(rep.datasets[arm])
        with stage("metrics", manifest, index):
            rep.metrics[arm] = metrics_report(
                rep.fits[arm].h1,
                estimator=estimator,
                dataset=rep.datasets[arm],
                n_resamples=config.bootstrap_resamples,
                seed=seed,
                workers=config.workers,
            )
    logger.info(
        "repetition %d: N_sigma H1 %.1f (plain) vs %.1f (randomized), H2 %.1f vs %.1f",
        index,
        rep.n_sigma(Mode.PLAIN, "h1"),
        rep.n_sigma(Mode.RANDOMIZED, "h1"),
        rep.n_sigma(Mode.PLAIN, "h2"),
        rep.n_sigma(Mode.RANDOMIZED, "h2"),
    )
    return rep


def run_experiment(config, output_dir=None, emit=True):
    """Run every repetition in order and, unless ``emit`` is false, write all reports"""
    output_dir = Path(output_dir or config.output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    seeds = repetition_seeds(config.master_seed, config.repetitions)
    manifest = Manifest(config, output_dir, seeds)
    started = time.monotonic()

    with stage("design", manifest):
        design = standard_design(config.l_max)
    logger.info(
        "design L_max=%d: %s sequences; %s shots per arm per repetition",
        config.l_max,
        humanize.intcomma(len(design)),
        humanize.intcomma(len(design) * config.shots_per_sequence),
    )

    repetitions = [run_repetition(config, design, i, seed, manifest) for i, seed in enumerate(seeds)]
    artifacts = RunArtifacts(config, output_dir, design, repetitions, manifest)
    if emit:
        with stage("report", manifest):
            emit_reports(artifacts)
    manifest.write(status="complete", finished=_now(), files=[str(p.relative_to(output_dir)) for p in artifacts.files])
    logger.info("run finished in %s", humanize.precisedelta(time.monotonic() - started, minimum_unit="seconds"))
    return artifacts


def _write_csv(path, columns, rows):
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=columns, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    return path


def n_sigma_rows(repetitions):
    for rep in repetitions:
        for arm in ARMS:
            report = rep.fits[arm].report
            for hypothesis in HYPOTHESES:
                yield {
                    "repetition": rep.index,
                    "arm": arm.value,
                    "hypothesis": hypothesis,
                    "n_sigma": getattr(report, f"n_sigma_{hypothesis}"),
                    "p_value": getattr(report, f"p_value_{hypothesis}"),
                    "logl": getattr(report, f"logl_{hypothesis}"),
                    "dof": getattr(report, f"dof_{hypothesis}"),
                    "logl_h0": report.logl_h0,
                    "dof_h0": report.dof_h0,
                }


def metrics_rows(repetitions):
    for rep in repetitions:
        for arm in ARMS:
            for row in rep.metrics[arm].rows():
                yield {"repetition": rep.index, "arm": arm.value, **row}


def emit_reports(artifacts):
    """Per-repetition datasets and models, summary tables, figures; returns the written paths"""
    out = artifacts.output_dir
    files = []
    save_design(artifacts.design, out / "design.json")
    write_circuit_list(artifacts.design, out / "circuits.txt")
    files += [out / "design.json", out / "circuits.txt"]

    for rep in artifacts.repetitions:
        rep_dir = out / f"rep_{rep.index:02d}"
        rep_dir.mkdir(exist_ok=True)
        for arm in ARMS:
            files.append(rep.datasets[arm].to_csv(rep_dir / f"dataset_{arm.value}.csv"))
            fit = rep.fits[arm]
            for name, writer in (
                (f"model_h1_{arm.value}.json", fit.h1.save),
                (f"model_h2_{arm.value}.json", fit.h2.save),
                (f"fit_report_{arm.value}.json", fit.report.save),
                (f"metrics_{arm.value}.json", rep.metrics[arm].save_json),
            ):
                writer(rep_dir / name)
                files.append(rep_dir / name)

    files.append(_write_csv(out / "n_sigma.csv", N_SIGMA_COLUMNS, n_sigma_rows(artifacts.repetitions)))
    files.append(_write_csv(out / "metrics.csv", METRICS_COLUMNS, metrics_rows(artifacts.repetitions)))
    files.append(_write_csv(out / "comparison.csv", COMPARISON_COLUMNS, artifacts.summary()))
    files += emit_figures(artifacts)
    artifacts.files = files
    return files


def emit_figures(artifacts):
    out = artifacts.output_dir
    reps = artifacts.repetitions
    series = {f"{h.upper()} {arm.value}": [rep.n_sigma(arm, h) for rep in reps] for arm in ARMS for h in HYPOTHESES}
    paths = [figures.line_chart(series, out / "n_sigma.svg", title="N_sigma per repetition", xlabel="repetition", ylabel="N_sigma")]

    last = reps[-1]
    for arm in ARMS:
        report = last.metrics[arm]
        paths.append(figures.heatmap(report.ptm["Gi"], out / f"gi_ptm_{arm.value}.svg", title=f"Gi PTM ({arm.value})"))
    for quantity in ("infidelity", "diamond"):
        groups = {
            label: {arm.value: getattr(last.metrics[arm][label], quantity) for arm in ARMS} for label in last.metrics[Mode.PLAIN].gates
        }
        paths.append(figures.bar_chart(groups, out / f"{quantity}.svg", title=f"{quantity} per gate", ylabel=quantity))
    return paths


def load_manifest(path):
    try:
        with open(path) as f:
            return json.load(f)
    except (OSError, ValueError) as e:
        raise ConfigError(f"cannot read manifest {path}: {e}") from e


def replay(manifest_path, output_dir=None):
    """Re-run the experiment recorded in a manifest"""
    data = load_manifest(manifest_path)
    config = ExperimentConfig.from_dict(data["config"])
    if config.digest() != data.get("config_digest"):
        logger.warning("manifest config digest does not match its config; replaying the recorded config")
    return run_experiment(config, output_dir or config.output_dir)
