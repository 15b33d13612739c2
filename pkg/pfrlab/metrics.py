"""
Per-gate quality metrics on gauge-optimized estimates: average gate infidelity, diamond
distance to the target, and parametric-bootstrap confidence intervals.

The diamond distance is the full norm ||R - R_target||_diamond (no 1/2 factor), so a
depolarizing channel of strength p sits at 3p/2 from the identity.
"""

import csv
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import humanize
import numpy as np
import psutil
from scipy import optimize

from .errors import ConvergenceError
from .estimation import GateSetModel, gauge_optimize
from .gst_design import GATE_LABELS
from .noise_sim import Dataset
from .pauli_algebra import PAULI_MATRICES, is_cptp

logger = logging.getLogger(__name__)

NORM_CONVENTION = "full"
GAUGE_CONVENTION = "target"
DIAMOND_STARTS = 32
BOOTSTRAP_DIAMOND_STARTS = 8
DIAMOND_TOL = 1e-8
MIN_RESAMPLES = 100
CI_PERCENTILES = (2.5, 97.5)

CSV_COLUMNS = ("gate", "infidelity", "diamond", "ci_lo", "ci_hi", "infidelity_ci_lo", "infidelity_ci_hi")


def avg_gate_infidelity(r, target):
    """1 - (Tr(T^-1 R) + d) / (d^2 + d) for a qubit, d = 2"""
    try:
        inverse = np.linalg.inv(np.asarray(target, dtype=float))
    except np.linalg.LinAlgError:
        raise ValueError("target PTM is singular") from None
    fidelity = (np.trace(inverse @ np.asarray(r, dtype=float)) + 2.0) / 6.0
    return float(1.0 - fidelity)


# ---------------------------------------------------------------------------
# diamond distance


def _apply_extended(m, state):
    """(M (x) id)(state) for a PTM ``m`` acting on the first factor of a 4x4 operator"""
    blocks = state.reshape(2, 2, 2, 2)
    coefficients = np.einsum("jxa,abxc->jbc", PAULI_MATRICES, blocks)
    out = 0.5 * np.einsum("ij,jbc,iyz->ybzc", m, coefficients, PAULI_MATRICES)
    return out.reshape(4, 4)


def _state(params):
    x = np.asarray(params, dtype=float)
    return np.array([x[0], x[1] + 1j * x[2], x[3] + 1j * x[4], x[5] + 1j * x[6]])


class _TraceNormObjective:
    """Negated ||(D (x) id)(psi psi^dagger)||_1 for psi = v / |v|, with its gradient"""

    def __init__(self, delta):
        self.delta = np.asarray(delta, dtype=float)
        self.adjoint = self.delta.T

    def __call__(self, params):
        v = _state(params)
        norm2 = float(np.vdot(v, v).real)
        if norm2 < 1e-300:
            return 0.0, np.zeros(7)
        out = _apply_extended(self.delta, np.outer(v, v.conj()))
        out = 0.5 * (out + out.conj().T)
        w, vecs = np.linalg.eigh(out)
        value = float(np.sum(np.abs(w)))
        sign_op = (vecs * np.sign(w)) @ vecs.conj().T
        a = _apply_extended(self.adjoint, sign_op)
        av = a @ v
        grad_complex = 2.0 * av / norm2 - 2.0 * value * v / norm2**2
        grad = np.array(
            [
                grad_complex[0].real,
                grad_complex[1].real,
                grad_complex[1].imag,
                grad_complex[2].real,
                grad_complex[2].imag,
                grad_complex[3].real,
                grad_complex[3].imag,
            ]
        )
        return -value / norm2, -grad


def _maximally_entangled():
    return np.array([1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0]) / np.sqrt(2.0)


def diamond_distance(r, target, starts=DIAMOND_STARTS, seed=0, tol=DIAMOND_TOL):
    """
    Full diamond norm of R - R_target by multi-start maximization of the output trace
    norm over pure states of the qubit plus a two-dimensional reference. The maximally
    entangled input is always one of the starts.
    """
    r = np.asarray(r, dtype=float)
    target = np.asarray(target, dtype=float)
    if not (is_cptp(r) and is_cptp(target)):
        logger.debug("diamond distance of a map outside the CPTP set")
    delta = r - target
    if np.max(np.abs(delta)) == 0.0:
        return 0.0

    objective = _TraceNormObjective(delta)
    rng = np.random.default_rng(seed)
    initial = [_maximally_entangled()] + list(rng.normal(size=(starts, 7)))
    best = None
    for x0 in initial:
        result = optimize.minimize(objective, x0, jac=True, method="BFGS", options={"gtol": tol})
        # status 2 is precision loss at a flat maximum
        if not np.isfinite(result.fun) or result.status not in (0, 2):
            continue
        value = -float(result.fun)
        if best is None or value > best:
            best = value
    if best is None:
        raise ConvergenceError(f"diamond norm search failed from all {len(initial)} starts")
    return best


# ---------------------------------------------------------------------------
# reports


@dataclass
class GateMetrics:
    gate: str
    infidelity: float
    diamond: float
    infidelity_ci: tuple = (float("nan"), float("nan"))
    diamond_ci: tuple = (float("nan"), float("nan"))

    def to_dict(self):
        return {
            "gate": self.gate,
            "infidelity": self.infidelity,
            "diamond": self.diamond,
            "infidelity_ci": list(self.infidelity_ci),
            "diamond_ci": list(self.diamond_ci),
        }


@dataclass
class MetricsReport:
    gates: dict
    ptm: dict
    ptm_ci: dict = field(default_factory=dict)
    n_resamples: int = 0
    norm_convention: str = NORM_CONVENTION
    gauge: str = GAUGE_CONVENTION
    metadata: dict = field(default_factory=dict)

    def __getitem__(self, label):
        return self.gates[label]

    def offdiagonal_outside_ci(self, label):
        """Off-diagonal PTM entries of ``label`` whose confidence interval excludes 0"""
        if label not in self.ptm_ci:
            return []
        lo, hi = self.ptm_ci[label]
        return [(i, j) for i in range(4) for j in range(4) if i != j and (lo[i, j] > 0.0 or hi[i, j] < 0.0)]

    def rows(self):
        for label, g in self.gates.items():
            yield {
                "gate": label,
                "infidelity": g.infidelity,
                "diamond": g.diamond,
                "ci_lo": g.diamond_ci[0],
                "ci_hi": g.diamond_ci[1],
                "infidelity_ci_lo": g.infidelity_ci[0],
                "infidelity_ci_hi": g.infidelity_ci[1],
            }

    def to_dict(self):
        return {
            "norm_convention": self.norm_convention,
            "gauge": self.gauge,
            "n_resamples": self.n_resamples,
            "gates": {k: g.to_dict() for k, g in self.gates.items()},
            "ptm": {k: np.asarray(m).tolist() for k, m in self.ptm.items()},
            "ptm_ci": {k: [np.asarray(lo).tolist(), np.asarray(hi).tolist()] for k, (lo, hi) in self.ptm_ci.items()},
            "metadata": self.metadata,
        }

    def save_json(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=1, sort_keys=True)

    def save_csv(self, path):
        with open(path, "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=CSV_COLUMNS, lineterminator="\n")
            writer.writeheader()
            writer.writerows(self.rows())


def compute_metrics(model, targets=None, starts=DIAMOND_STARTS, gauge_fix=True):
    """Point metrics per gate, after gauge-optimizing ``model`` to the targets"""
    target = GateSetModel.target(targets)
    fixed = gauge_optimize(model, target) if gauge_fix else model
    gates = {}
    for label in GATE_LABELS:
        gates[label] = GateMetrics(
            gate=label,
            infidelity=avg_gate_infidelity(fixed.gates[label], target.gates[label]),
            diamond=diamond_distance(fixed.gates[label], target.gates[label], starts=starts),
        )
    return MetricsReport(gates=gates, ptm={k: fixed.gates[k].copy() for k in GATE_LABELS})


# ---------------------------------------------------------------------------
# parametric bootstrap


def _resample(dataset, probabilities, rng):
    if dataset.metadata.get("exact"):
        k = dataset.n * probabilities
    else:
        k = rng.binomial(dataset.n.astype(np.int64), probabilities)
    return Dataset(dataset.sequence_ids, dataset.n, k, dict(dataset.metadata))


def _replicate(args):
    estimator, dataset, model, probabilities, seed, starts = args
    rng = np.random.default_rng(seed)
    target = GateSetModel.target(estimator.targets)
    fitted = gauge_optimize(estimator.refit(_resample(dataset, probabilities, rng), model), target)
    ptms = np.array([fitted.gates[label] for label in GATE_LABELS])
    infidelity = np.array([avg_gate_infidelity(fitted.gates[k], target.gates[k]) for k in GATE_LABELS])
    diamond = np.array([diamond_distance(fitted.gates[k], target.gates[k], starts=starts, seed=seed) for k in GATE_LABELS])
    return ptms, infidelity, diamond


def _worker_count(workers):
    if workers:
        return max(1, int(workers))
    return psutil.cpu_count(logical=False) or 1


@dataclass
class BootstrapResult:
    ptm_lo: np.ndarray
    ptm_hi: np.ndarray
    infidelity: np.ndarray  # (2, gates)
    diamond: np.ndarray  # (2, gates)
    n_resamples: int

    def ptm_ci(self):
        return {label: (self.ptm_lo[g], self.ptm_hi[g]) for g, label in enumerate(GATE_LABELS)}


def bootstrap_ci(estimator, dataset, model, n_resamples=MIN_RESAMPLES, seed=0, workers=1, starts=BOOTSTRAP_DIAMOND_STARTS):
    """
    Parametric bootstrap: resample counts from the fitted model's probabilities, refit
    warm-started at ``model``, gauge-optimize, and take the 2.5/97.5 percentiles of every
    PTM entry and metric. Resample i always uses the stream spawned as child i of ``seed``.
    """
    if n_resamples < MIN_RESAMPLES:
        raise ValueError(f"bootstrap needs at least {MIN_RESAMPLES} resamples, got {n_resamples}")
    started = time.monotonic()
    probabilities = estimator.probabilities(model, dataset)
    seeds = [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n_resamples)]
    jobs = [(estimator, dataset, model, probabilities, s, starts) for s in seeds]

    n_workers = min(_worker_count(workers), n_resamples)
    if n_workers > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            replicates = list(pool.map(_replicate, jobs))
    else:
        replicates = [_replicate(job) for job in jobs]

    ptms = np.array([r[0] for r in replicates])
    infidelity = np.array([r[1] for r in replicates])
    diamond = np.array([r[2] for r in replicates])
    lo, hi = CI_PERCENTILES
    result = BootstrapResult(
        ptm_lo=np.percentile(ptms, lo, axis=0),
        ptm_hi=np.percentile(ptms, hi, axis=0),
        infidelity=np.percentile(infidelity, CI_PERCENTILES, axis=0),
        diamond=np.percentile(diamond, CI_PERCENTILES, axis=0),
        n_resamples=n_resamples,
    )
    logger.info(
        "bootstrap: %s resamples on %d worker(s) in %s",
        humanize.intcomma(n_resamples),
        n_workers,
        humanize.precisedelta(time.monotonic() - started, minimum_unit="milliseconds"),
    )
    return result


def metrics_report(model, targets=None, estimator=None, dataset=None, n_resamples=0, seed=0, workers=1):
    """Point metrics, plus bootstrap intervals when an estimator, dataset and resample count are given"""
    report = compute_metrics(model, targets)
    if estimator is None or dataset is None or not n_resamples:
        return report
    boot = bootstrap_ci(estimator, dataset, model, n_resamples, seed=seed, workers=workers)
    for g, label in enumerate(GATE_LABELS):
        report.gates[label].infidelity_ci = tuple(float(v) for v in boot.infidelity[:, g])
        report.gates[label].diamond_ci = tuple(float(v) for v in boot.diamond[:, g])
    report.ptm_ci = boot.ptm_ci()
    report.n_resamples = boot.n_resamples
    return report
