"""
Command line interface: pfrlab [-v|-q] <design|randomize|simulate|fit|metrics|run> [options]
"""

import argparse
import logging
import sys
from pathlib import Path

import humanize
import numpy as np
from rich.console import Console

from .config import PROFILES, load_config
from .errors import (
    ECONFIG,
    EDESIGN,
    EFIT,
    EINTERRUPTED,
    EMETRICS,
    EOPTION_PARSER,
    ERANDOMIZE,
    EREPORT,
    ESIMULATE,
    ConfigError,
    PfrLabError,
    StageError,
)
from .estimation import GateSetModel, GstEstimator
from .gst_design import DEFAULT_L_MAX, load_design, save_design, standard_design, write_circuit_list
from .harness import ARMS, replay, run_experiment
from .log import setup_logging
from .metrics import metrics_report
from .noise_sim import Dataset, InterleaveSchedule, sample_datasets
from .pfr import FramePolicy, format_randomized, randomize_batch, read_circuits

COMMAND_EXIT_CODES = {
    "design": EDESIGN,
    "randomize": ERANDOMIZE,
    "simulate": ESIMULATE,
    "fit": EFIT,
    "metrics": EMETRICS,
    "run": EREPORT,
}

logger = logging.getLogger(__name__)
console = Console()


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        sys.exit(EOPTION_PARSER)


def _positive_int(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1: {value}")
    return value


def _build_parser(prog):
    parser = _Parser(prog=prog, description="Pauli-frame randomized gate set tomography lab")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="warnings and errors only")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("design", help="generate the GST sequence list")
    p.add_argument("--lmax", type=_positive_int, default=DEFAULT_L_MAX, help="largest germ power (power of two)")
    p.add_argument("--out", default=".", help="output directory")

    p = sub.add_parser("randomize", help="Pauli-frame randomize Clifford circuits")
    p.add_argument("--circuits", required=True, help="file with one circuit per line")
    p.add_argument("--count", type=_positive_int, default=1, help="randomizations per circuit")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--policy", choices=[x.value for x in FramePolicy], default=FramePolicy.ABSORB.value)
    p.add_argument("--out", default=".")

    p = sub.add_parser("simulate", help="sample interleaved randomized and plain datasets")
    p.add_argument("--design", required=True)
    p.add_argument("--config", help="TOML config file")
    p.add_argument("--profile", choices=list(PROFILES), default="quick")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default=".")

    p = sub.add_parser("fit", help="fit H0/H1/H2 and report N_sigma")
    p.add_argument("--design", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", default=".")

    p = sub.add_parser("metrics", help="per-gate infidelity and diamond distance")
    p.add_argument("--model", required=True)
    p.add_argument("--design")
    p.add_argument("--dataset")
    p.add_argument("--resamples", type=int, default=0, help="bootstrap resamples (0 disables, else >= 100)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=".")

    p = sub.add_parser("run", help="full experiment pipeline")
    p.add_argument("--config", help="TOML config file")
    p.add_argument("--profile", choices=list(PROFILES), default="quick")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--replay", help="re-run the experiment recorded in a manifest.json")
    return parser


def parse_cmdline(cmdline):
    """Parse ``cmdline`` (program name first); a bare invocation prints help and exits 0"""
    parser = _build_parser(Path(cmdline[0]).name if cmdline else "pfrlab")
    args = cmdline[1:]
    if not args:
        parser.print_help()
        sys.exit(0)
    opts = parser.parse_args(args)
    if opts.command is None:
        parser.print_help()
        sys.exit(0)
    if opts.command == "metrics":
        if (opts.design is None) != (opts.dataset is None):
            parser.error("--design and --dataset go together")
        if opts.resamples and (opts.dataset is None or opts.resamples < 100):
            parser.error("--resamples needs --design/--dataset and at least 100 resamples")
    if opts.command == "run" and opts.replay and opts.config:
        parser.error("--replay and --config are exclusive")
    return opts


def _out(path):
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_design(opts):
    out = _out(opts.out)
    design = standard_design(opts.lmax)
    save_design(design, out / "design.json")
    write_circuit_list(design, out / "circuits.txt")
    console.print(f"{humanize.intcomma(len(design))} sequences, longest {design.max_flat_length()} gates -> {out}")


def cmd_randomize(opts):
    out = _out(opts.out)
    rng = np.random.default_rng(opts.seed)
    lines = []
    for circuit in read_circuits(opts.circuits):
        if len(circuit) == 0:
            logger.info("skipping empty circuit")
            continue
        batch = randomize_batch(circuit, rng, opts.count, opts.policy)
        lines.extend(format_randomized(batch.circuit(row)) for row in range(batch.count))
    (out / "randomized.txt").write_text("".join(line + "\n" for line in lines))
    console.print(f"{humanize.intcomma(len(lines))} randomized circuits -> {out / 'randomized.txt'}")


def cmd_simulate(opts):
    out = _out(opts.out)
    config = load_config(opts.config, opts.profile, master_seed=opts.seed)
    design = load_design(opts.design)
    datasets = sample_datasets(
        design.sequences,
        config.shots_per_sequence,
        config.noise,
        config.spam,
        config.master_seed,
        schedule=InterleaveSchedule(block=config.interleave_block, modes=ARMS),
        n_randomizations=config.n_randomizations,
        policy=config.frame_policy,
    )
    for arm, dataset in datasets.items():
        dataset.metadata["config_digest"] = config.digest()
        dataset.to_csv(out / f"dataset_{arm.value}.csv")
    console.print(f"{humanize.intcomma(sum(d.total_shots for d in datasets.values()))} shots -> {out}")


def cmd_fit(opts):
    out = _out(opts.out)
    design = load_design(opts.design)
    result = GstEstimator(design).fit(Dataset.from_csv(opts.dataset))
    result.h1.save(out / "model_h1.json")
    result.h2.save(out / "model_h2.json")
    result.report.save(out / "fit_report.json")
    console.print(f"N_sigma(H1) = {result.report.n_sigma_h1:.2f}, N_sigma(H2) = {result.report.n_sigma_h2:.2f}")


def cmd_metrics(opts):
    out = _out(opts.out)
    model = GateSetModel.load(opts.model)
    estimator = dataset = None
    if opts.design:
        estimator = GstEstimator(load_design(opts.design))
        dataset = Dataset.from_csv(opts.dataset)
    report = metrics_report(model, estimator=estimator, dataset=dataset, n_resamples=opts.resamples, seed=opts.seed)
    report.save_json(out / "metrics.json")
    report.save_csv(out / "metrics.csv")
    for row in report.rows():
        console.print(f"{row['gate']}: infidelity {row['infidelity']:.3e}, diamond {row['diamond']:.3e}")


def cmd_run(opts):
    if opts.replay:
        artifacts = replay(opts.replay, opts.out)
    else:
        config = load_config(opts.config, opts.profile, master_seed=opts.seed, output_dir=opts.out)
        artifacts = run_experiment(config)
    for row in artifacts.summary():
        console.print(
            f"repetition {row['repetition']}: N_sigma ratio H1 {row['ratio_h1']:.1f}, H2 {row['ratio_h2']:.1f}; "
            f"Gi off-diagonals outside CI: randomized {row['gi_outside_ci_randomized']}, plain {row['gi_outside_ci_plain']}"
        )
    console.print(f"outputs in {artifacts.output_dir}")


COMMANDS = {
    "design": cmd_design,
    "randomize": cmd_randomize,
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "metrics": cmd_metrics,
    "run": cmd_run,
}


def main(argv=None):
    opts = parse_cmdline(sys.argv if argv is None else argv)
    setup_logging(-1 if opts.quiet else opts.verbose)
    try:
        COMMANDS[opts.command](opts)
    except KeyboardInterrupt:
        console.print("[red]interrupted[/red]")
        sys.exit(EINTERRUPTED)
    except StageError as e:
        console.print(f"[red]stage {e.stage} failed:[/red] {e.cause}")
        if e.manifest_path:
            console.print(f"partial manifest: {e.manifest_path}")
        sys.exit(e.exit_code)
    except ConfigError as e:
        console.print(f"[red]configuration error:[/red] {e}")
        sys.exit(ECONFIG)
    except (PfrLabError, OSError, ValueError) as e:
        console.print(f"[red]{opts.command} failed:[/red] {e}")
        sys.exit(COMMAND_EXIT_CODES[opts.command])
    except Exception as e:
        logger.debug("%s traceback", opts.command, exc_info=True)
        console.print(f"[red]{opts.command} failed:[/red] {type(e).__name__}: {e}")
        sys.exit(COMMAND_EXIT_CODES[opts.command])
    return 0
