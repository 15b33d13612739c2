"""
Gate-set estimation under three nested hypotheses and likelihood-ratio badness of fit.

H0  every sequence has its own outcome probability (saturated binomial model)
H1  one Markovian trace-preserving gate set, CP enforced by a final projection
H2  each gate is a Pauli-stochastic channel after its target Clifford, obtained by
    projecting H1
"""

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field

import humanize
import numpy as np
from scipy import linalg, optimize, special, stats

from .errors import DesignError, DofError, GaugeError, InformationallyIncompleteError
from .gst_design import GATE_LABELS
from .noise_sim import IDEAL_EFFECT, IDEAL_RHO
from .pauli_algebra import (
    eigenvalues_from_probs,
    named_cliffords,
    pauli_probs_from_eigenvalues,
    project_cptp,
)

logger = logging.getLogger(__name__)

N_GATES = len(GATE_LABELS)
GATE_PARAMS = 12
H1_PARAM_COUNT = N_GATES * GATE_PARAMS + 3 + 4
H2_PARAM_COUNT = N_GATES * 3 + 3 + 4

LIKELIHOOD_CLAMP = 1e-9
MIN_PROB = 1e-4
ZERO_COUNT_RADIUS = 1e-4
COMPLEX_STEP = 1e-20
NESTING_SLACK = 1e-6
RANK_TOLERANCE = 1e-8
MAX_CONDITION = 1e8
MIN_GAUGE_DET = 1e-6
GAUGE_BOUND = 1.0

SQRT2_INV = 1.0 / math.sqrt(2.0)


def target_ptms(targets=None):
    targets = targets or named_cliffords()
    return {label: targets[label].ptm.astype(float) for label in GATE_LABELS}


@dataclass
class GateSetModel:
    gates: dict
    rho: np.ndarray
    effect: np.ndarray
    param_count: int = H1_PARAM_COUNT
    gauge_dim: int = 0
    converged: bool = True
    kind: str = "h1"

    def __post_init__(self):
        self.gates = {label: np.array(m, dtype=float) for label, m in self.gates.items()}
        self.rho = np.array(self.rho, dtype=float)
        self.effect = np.array(self.effect, dtype=float)

    @classmethod
    def target(cls, targets=None):
        return cls(target_ptms(targets), np.array(IDEAL_RHO), np.array(IDEAL_EFFECT), kind="target")

    def gate_array(self):
        return np.array([self.gates[label] for label in GATE_LABELS])

    def copy(self, **changes):
        fields = {
            "gates": {k: v.copy() for k, v in self.gates.items()},
            "rho": self.rho.copy(),
            "effect": self.effect.copy(),
            "param_count": self.param_count,
            "gauge_dim": self.gauge_dim,
            "converged": self.converged,
            "kind": self.kind,
        }
        fields.update(changes)
        return GateSetModel(**fields)

    def transform(self, gauge):
        """R -> G R G^-1, rho -> G rho, effect -> G^-T effect"""
        gauge = np.asarray(gauge, dtype=float)
        if abs(np.linalg.det(gauge)) < MIN_GAUGE_DET:
            raise GaugeError(f"gauge transform is ill-conditioned (|det| = {abs(np.linalg.det(gauge)):.3e})")
        inverse = np.linalg.inv(gauge)
        return self.copy(
            gates={k: gauge @ m @ inverse for k, m in self.gates.items()},
            rho=gauge @ self.rho,
            effect=inverse.T @ self.effect,
        )

    def probability(self, flat):
        state = self.rho
        for label in flat:
            state = self.gates[label] @ state
        return float(self.effect @ state)

    def to_dict(self):
        return {
            "kind": self.kind,
            "gates": {k: v.tolist() for k, v in self.gates.items()},
            "rho": self.rho.tolist(),
            "effect": self.effect.tolist(),
            "param_count": self.param_count,
            "gauge_dim": self.gauge_dim,
            "converged": self.converged,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            gates=d["gates"],
            rho=d["rho"],
            effect=d["effect"],
            param_count=int(d.get("param_count", H1_PARAM_COUNT)),
            gauge_dim=int(d.get("gauge_dim", 0)),
            converged=bool(d.get("converged", True)),
            kind=d.get("kind", "h1"),
        )

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=1)

    @classmethod
    def load(cls, path):
        with open(path) as f:
            return cls.from_dict(json.load(f))


@dataclass
class FitReport:
    logl_h0: float
    logl_h1: float
    logl_h2: float
    dof_h0: int
    dof_h1: int
    dof_h2: int
    n_sigma_h1: float
    n_sigma_h2: float
    p_value_h1: float = float("nan")
    p_value_h2: float = float("nan")
    gauge_rank_h1: int = 0
    residual_gauge_rank_h2: int = 0
    converged: bool = True
    n_sequences: int = 0
    total_shots: float = 0
    metadata: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=1, sort_keys=True)


@dataclass
class FitResult:
    h1: GateSetModel
    h2: GateSetModel
    report: FitReport


# ---------------------------------------------------------------------------
# H0 and the likelihood ratio


def fit_h0(dataset):
    """Saturated model: p = k/n per sequence, with 0 log 0 = 0"""
    n = np.asarray(dataset.n, dtype=float)
    k = np.asarray(dataset.k, dtype=float)
    p = k / n
    logl = float(np.sum(special.xlogy(k, p) + special.xlogy(n - k, 1.0 - p)))
    return logl, len(n)


def log_likelihood(p, n, k):
    p = np.clip(p, LIKELIHOOD_CLAMP, 1.0 - LIKELIHOOD_CLAMP)
    return float(np.sum(special.xlogy(k, p) + special.xlogy(n - k, 1.0 - p)))


def _dof_difference(dof_alt, dof_null):
    k = dof_null - dof_alt
    if k <= 0:
        raise DofError(f"null hypothesis must have more degrees of freedom ({dof_null} <= {dof_alt})")
    return k


def n_sigma(logl_alt, logl_null, dof_alt, dof_null):
    """(2 (logL_null - logL_alt) - k) / sqrt(2 k) with k = dof_null - dof_alt"""
    k = _dof_difference(dof_alt, dof_null)
    if logl_null < logl_alt - NESTING_SLACK:
        logger.warning("nested likelihoods out of order: null %.6f < alternative %.6f", logl_null, logl_alt)
    llr = 2.0 * (logl_null - logl_alt)
    return (llr - k) / math.sqrt(2.0 * k)


def p_value(logl_alt, logl_null, dof_alt, dof_null):
    k = _dof_difference(dof_alt, dof_null)
    return float(stats.chi2.sf(2.0 * (logl_null - logl_alt), k))


# ---------------------------------------------------------------------------
# parameterization


def pack(model):
    parts = [model.gates[label][1:].ravel() for label in GATE_LABELS]
    return np.concatenate(parts + [model.rho[1:], model.effect])


def unpack_batch(xs):
    """(B, 43) parameters -> gates (B, 3, 4, 4), rho (B, 4), effect (B, 4)"""
    xs = np.atleast_2d(xs)
    b = xs.shape[0]
    gates = np.zeros((b, N_GATES, 4, 4), dtype=xs.dtype)
    gates[:, :, 0, 0] = 1.0
    gates[:, :, 1:, :] = xs[:, : N_GATES * GATE_PARAMS].reshape(b, N_GATES, 3, 4)
    rho = np.empty((b, 4), dtype=xs.dtype)
    rho[:, 0] = SQRT2_INV
    rho[:, 1:] = xs[:, N_GATES * GATE_PARAMS : N_GATES * GATE_PARAMS + 3]
    effect = xs[:, N_GATES * GATE_PARAMS + 3 :]
    return gates, rho, effect


def unpack(x, **kwargs):
    gates, rho, effect = unpack_batch(np.asarray(x, dtype=float))
    return GateSetModel(dict(zip(GATE_LABELS, gates[0], strict=True)), rho[0], effect[0], **kwargs)


def physical_projection(model):
    """Nearest CPTP map for every gate; SPAM vectors are left as estimated"""
    return model.copy(gates={k: project_cptp(m) for k, m in model.gates.items()})


# ---------------------------------------------------------------------------
# structured probability evaluation


class SequencePlan:
    """Index arrays describing sequences as meas_fid . germ^reps . prep_fid"""

    def __init__(self, specs, design):
        prep_index = {f: i for i, f in enumerate(design.prep_fiducials)}
        meas_index = {f: i for i, f in enumerate(design.meas_fiducials)}
        germ_index = {g: i for i, g in enumerate(design.germs)}
        pairs = {}
        prep, meas, pair = [], [], []
        try:
            for s in specs:
                prep.append(prep_index[s.prep])
                meas.append(meas_index[s.meas])
                key = (germ_index[s.germ], s.reps) if s.germ and s.reps else (-1, 0)
                pair.append(pairs.setdefault(key, len(pairs)))
        except KeyError as e:
            raise DesignError(f"sequence does not follow the design structure: {e}") from e
        self.design = design
        self.prep = np.array(prep, dtype=np.int64)
        self.meas = np.array(meas, dtype=np.int64)
        self.pair = np.array(pair, dtype=np.int64)
        self.pairs = list(pairs)

    def __len__(self):
        return len(self.prep)


def _products(gates, circuits):
    """(B, n, 4, 4) products of label circuits, first label applied first"""
    b = gates.shape[0]
    label_index = {label: i for i, label in enumerate(GATE_LABELS)}
    out = np.empty((b, len(circuits), 4, 4), dtype=gates.dtype)
    for i, circuit in enumerate(circuits):
        m = np.broadcast_to(np.eye(4, dtype=gates.dtype), (b, 4, 4))
        for label in circuit:
            m = gates[:, label_index[label]] @ m
        out[:, i] = m
    return out


def plan_probabilities(xs, plan):
    """Outcome probabilities (B, S) for a batch of parameter vectors"""
    return structured_probabilities(*unpack_batch(xs), plan)


def model_probabilities(model, plan):
    gates = model.gate_array()[None]
    return structured_probabilities(gates, model.rho[None], model.effect[None], plan)[0]


def structured_probabilities(gates, rho, effect, plan):
    """Probabilities (B, S) from gate arrays (B, 3, 4, 4) and SPAM vectors (B, 4)"""
    design = plan.design
    prep_vecs = np.einsum("bfij,bj->bfi", _products(gates, design.prep_fiducials), rho)
    meas_vecs = np.einsum("bi,bfij->bfj", effect, _products(gates, design.meas_fiducials))
    germ_mats = _products(gates, design.germs)

    q = np.empty((gates.shape[0], len(plan.pairs), prep_vecs.shape[1], 4), dtype=gates.dtype)
    for u, (germ, reps) in enumerate(plan.pairs):
        if germ < 0:
            q[:, u] = prep_vecs
        else:
            power = np.linalg.matrix_power(germ_mats[:, germ], reps)
            q[:, u] = np.einsum("bij,bfj->bfi", power, prep_vecs)
    return np.einsum("bsi,bsi->bs", meas_vecs[:, plan.meas], q[:, plan.pair, plan.prep])


def _outcome_terms(q, c, n):
    """
    Poisson-picture log-likelihood c log q - n q of one outcome and its derivative in q.
    Observed outcomes continue below MIN_PROB with the second-order expansion of the
    log; unobserved ones become the quadratic -n (q^2 / 2r + r / 2) inside |q| < r. Both
    pieces are C1 and keep penalizing probabilities that leave [0, 1].
    """
    observed = c > 0
    low = observed & (q < MIN_PROB)
    shift = q - MIN_PROB
    safe = np.where(low | ~observed, 1.0, q)
    log_q = np.where(low, math.log(MIN_PROB) + shift / MIN_PROB - shift**2 / (2 * MIN_PROB**2), np.log(safe))
    dlog_q = np.where(low, 1.0 / MIN_PROB - shift / MIN_PROB**2, 1.0 / safe)
    band = ~observed & (q < ZERO_COUNT_RADIUS)
    unobserved = np.where(band, -n * (q**2 / (2 * ZERO_COUNT_RADIUS) + ZERO_COUNT_RADIUS / 2), -n * q)
    term = np.where(observed, c * log_q - n * q, unobserved)
    dterm = np.where(observed, c * dlog_q - n, np.where(band, -n * q / ZERO_COUNT_RADIUS, -n))
    return term, dterm


class _NegLogLikelihood:
    """
    Per-shot negative log-likelihood and its exact gradient by complex-step differentiation.
    Inside [MIN_PROB, 1 - MIN_PROB] it equals the binomial log-likelihood; outside, the
    outcome terms extend it smoothly so the optimizer is pushed back into range.
    """

    def __init__(self, plan, n, k):
        self.plan = plan
        self.n = np.asarray(n, dtype=float)
        self.k = np.asarray(k, dtype=float)
        self.total = float(self.n.sum())
        self.evaluations = 0

    def __call__(self, x):
        self.evaluations += 1
        size = x.shape[0]
        xs = x[None, :] + 1j * COMPLEX_STEP * np.eye(size)
        probs = plan_probabilities(xs, self.plan)
        p = probs[0].real
        dp = probs.imag / COMPLEX_STEP
        one, d_one = _outcome_terms(p, self.k, self.n)
        zero, d_zero = _outcome_terms(1.0 - p, self.n - self.k, self.n)
        logl = np.sum(one + zero + self.n)
        weights = d_one - d_zero
        return -logl / self.total, -(dp @ weights) / self.total


# ---------------------------------------------------------------------------
# estimator


class GstEstimator:
    """Likelihood machinery bound to one design and one set of target Cliffords"""

    def __init__(self, design, targets=None, maxiter=3000):
        self.design = design
        self.targets = targets or named_cliffords()
        self.target_model = GateSetModel.target(self.targets)
        self.maxiter = maxiter

    def _specs(self, dataset):
        try:
            return [self.design.sequences[int(i)] for i in dataset.sequence_ids]
        except IndexError as e:
            raise DesignError("dataset refers to sequences outside the design") from e

    def plan(self, dataset):
        return SequencePlan(self._specs(dataset), self.design)

    def probabilities(self, model, dataset):
        return np.clip(model_probabilities(model, self.plan(dataset)), 0.0, 1.0)

    def log_likelihood(self, model, dataset):
        p = model_probabilities(model, self.plan(dataset))
        return log_likelihood(p, dataset.n, dataset.k)

    def _minimize(self, dataset, starts):
        """L-BFGS-B from every start; the lowest objective wins"""
        objective = _NegLogLikelihood(self.plan(dataset), dataset.n, dataset.k)
        best = None
        for i, x0 in enumerate(starts):
            result = optimize.minimize(
                objective,
                x0,
                jac=True,
                method="L-BFGS-B",
                options={"maxiter": self.maxiter, "maxcor": 30, "ftol": 1e-14, "gtol": 1e-10},
            )
            if best is None or result.fun < best.fun:
                if best is not None:
                    logger.debug("start %d improved the objective from %.10f to %.10f", i, best.fun, result.fun)
                best = result
        return best

    def stages(self):
        return [length for length in self.design.max_lengths]

    def fit_h1(self, dataset, seed, progressive=True):
        """
        Progressive-refinement MLE followed by CPTP projection. The first stage starts
        from ``seed`` and from the targets, later stages from the previous optimum and
        again from ``seed``; a refit (``progressive=False``) uses ``seed`` alone.
        """
        started = time.monotonic()
        seed_x = pack(seed)
        target_x = pack(self.target_model)
        x = seed_x
        stage_lengths = self.stages() if progressive else [self.design.l_max]
        powers = {s.id: s.power for s in self.design.sequences}
        result = None
        for length in stage_lengths:
            wanted = [i for i in dataset.sequence_ids if powers[int(i)] <= length]
            if not wanted:
                continue
            if not progressive:
                starts = [x]
            elif result is None:
                starts = [seed_x] if np.allclose(seed_x, target_x) else [seed_x, target_x]
            else:
                starts = [x, seed_x]
            result = self._minimize(dataset.subset(wanted), starts)
            x = result.x
            logger.debug("H1 stage L=%d: %d sequences, %d iterations, f=%.10f", length, len(wanted), result.nit, result.fun)

        converged = bool(result.success) if result is not None else False
        if not converged:
            logger.warning("H1 optimizer did not converge: %s", getattr(result, "message", "no data"))
        model = physical_projection(unpack(x, converged=converged, kind="h1"))
        model.gauge_dim = gauge_rank(model)
        logger.info("H1 fit finished in %s", humanize.precisedelta(time.monotonic() - started, minimum_unit="milliseconds"))
        return model

    def refit(self, dataset, seed):
        """Single-stage refit warm-started at ``seed``"""
        return self.fit_h1(dataset, seed, progressive=False)

    def fit(self, dataset, seed=None):
        logl_h0, dof_h0 = fit_h0(dataset)
        seed = seed or lgst_seed(dataset, self.design, self.targets)
        h1 = self.fit_h1(dataset, seed)
        logl_h1 = self.log_likelihood(h1, dataset)

        h2 = fit_h2(h1, self.targets)
        logl_h2 = self.log_likelihood(h2, dataset)
        if logl_h2 > logl_h1 + NESTING_SLACK:
            logger.info("H2 beat H1 (%.6f > %.6f); refitting H1 from the H2 estimate", logl_h2, logl_h1)
            refit = self.refit(dataset, h2)
            logl_refit = self.log_likelihood(refit, dataset)
            if logl_refit >= logl_h2:
                h1, logl_h1 = refit, logl_refit
            else:
                h1, logl_h1 = h2.copy(kind="h1", param_count=H1_PARAM_COUNT), logl_h2

        rank_h1 = gauge_rank(h1)
        residual_h2 = residual_gauge_rank(h2, self.targets)
        dof_h1 = H1_PARAM_COUNT - rank_h1
        dof_h2 = H2_PARAM_COUNT - residual_h2
        h1.gauge_dim = rank_h1
        h2.gauge_dim = residual_h2

        report = FitReport(
            logl_h0=logl_h0,
            logl_h1=logl_h1,
            logl_h2=logl_h2,
            dof_h0=dof_h0,
            dof_h1=dof_h1,
            dof_h2=dof_h2,
            n_sigma_h1=n_sigma(logl_h1, logl_h0, dof_h1, dof_h0),
            n_sigma_h2=n_sigma(logl_h2, logl_h0, dof_h2, dof_h0),
            p_value_h1=p_value(logl_h1, logl_h0, dof_h1, dof_h0),
            p_value_h2=p_value(logl_h2, logl_h0, dof_h2, dof_h0),
            gauge_rank_h1=rank_h1,
            residual_gauge_rank_h2=residual_h2,
            converged=h1.converged,
            n_sequences=len(dataset),
            total_shots=float(np.sum(dataset.n)),
            metadata={"randomized": dataset.randomized},
        )
        logger.info("N_sigma(H1) = %.2f, N_sigma(H2) = %.2f", report.n_sigma_h1, report.n_sigma_h2)
        return FitResult(h1, h2, report)


def fit_h1_mle(dataset, design, seed, targets=None):
    return GstEstimator(design, targets).fit_h1(dataset, seed)


def fit_gate_set(dataset, design, targets=None):
    return GstEstimator(design, targets).fit(dataset)


# ---------------------------------------------------------------------------
# linear inversion seed


def _fiducial_probabilities(dataset, design, middle):
    freq = dict(zip((int(i) for i in dataset.sequence_ids), dataset.frequencies, strict=True))
    fids_p, fids_m = design.prep_fiducials, design.meas_fiducials
    out = np.empty((len(fids_m), len(fids_p)))
    for i, meas in enumerate(fids_m):
        for j, prep in enumerate(fids_p):
            flat = tuple(prep) + tuple(middle) + tuple(meas)
            if flat not in design or design.index_of(flat) not in freq:
                raise InformationallyIncompleteError(float("inf"))
            out[i, j] = freq[design.index_of(flat)]
    return out


def lgst_seed(dataset, design, targets=None):
    """
    Linear-inversion estimate from fiducial-pair and single-gate sequences. The
    over-complete fiducial matrices are reduced to 4x4 with pseudo-inverses of their
    target counterparts, then gauge-optimized to the targets and TP-projected.
    """
    target = GateSetModel.target(targets)
    a_t = np.array([target.effect @ _circuit_ptm(target, f) for f in design.meas_fiducials])
    b_t = np.array([_circuit_ptm(target, f) @ target.rho for f in design.prep_fiducials]).T
    a_pinv = np.linalg.pinv(a_t)
    b_pinv = np.linalg.pinv(b_t)

    gram = _fiducial_probabilities(dataset, design, ())
    gram_red = a_pinv @ gram @ b_pinv
    condition = np.linalg.cond(gram_red)
    if not np.isfinite(condition) or condition > MAX_CONDITION:
        raise InformationallyIncompleteError(condition)
    gram_inv = np.linalg.inv(gram_red)

    gates = {}
    for label in GATE_LABELS:
        m = _fiducial_probabilities(dataset, design, (label,))
        gates[label] = gram_inv @ (a_pinv @ m @ b_pinv)

    empty_prep = design.prep_fiducials.index(())
    empty_meas = design.meas_fiducials.index(())
    rho = gram_inv @ a_pinv @ gram[:, empty_prep]
    effect = gram[empty_meas, :] @ b_pinv

    model = GateSetModel(gates, rho, effect, kind="lgst")
    try:
        model = gauge_optimize(model, target)
    except GaugeError as e:
        logger.warning("LGST gauge optimization failed, keeping the raw estimate: %s", e)
    model = model.copy(gates={k: _tp(m) for k, m in model.gates.items()}, rho=_with_trace(model.rho))
    return model


def _circuit_ptm(model, circuit):
    m = np.eye(4)
    for label in circuit:
        m = model.gates[label] @ m
    return m


def _tp(m):
    out = np.array(m, dtype=float)
    out[0] = (1.0, 0.0, 0.0, 0.0)
    return out


def _with_trace(rho):
    out = np.array(rho, dtype=float)
    out[0] = SQRT2_INV
    return out


# ---------------------------------------------------------------------------
# gauge


def is_tp_model(model, tol=1e-12):
    return all(np.all(np.abs(m[0] - (1.0, 0.0, 0.0, 0.0)) <= tol) for m in model.gates.values())


def _generator(params, preserve_tp):
    x = np.zeros((4, 4))
    if preserve_tp:
        x[1:] = np.reshape(params, (3, 4))
    else:
        x[:] = np.reshape(params, (4, 4))
    return x


def gauge_matrix(params, preserve_tp=False):
    """
    G = exp(X), so det G = exp(tr X) never vanishes. A trace-preserving gauge has a zero
    first row in X, which keeps the first row of G equal to (1, 0, 0, 0).
    """
    return linalg.expm(_generator(params, preserve_tp))


def _gauge_pair(params, preserve_tp):
    x = _generator(params, preserve_tp)
    return linalg.expm(x), linalg.expm(-x)


def _gauge_search(residuals, args, preserve_tp, max_nfev=2000):
    """Bounded trust-region search over gauge generators, started at the identity"""
    size = 12 if preserve_tp else 16
    return optimize.least_squares(
        residuals,
        np.zeros(size),
        args=args,
        method="trf",
        bounds=(-GAUGE_BOUND, GAUGE_BOUND),
        xtol=1e-14,
        ftol=1e-14,
        gtol=1e-14,
        max_nfev=max_nfev,
    )


def _gauge_residuals(params, model, target, spam_weight, preserve_tp):
    gauge, inverse = _gauge_pair(params, preserve_tp)
    res = [(gauge @ model.gates[label] @ inverse - target.gates[label]).ravel() for label in GATE_LABELS]
    if spam_weight:
        res.append(spam_weight * (gauge @ model.rho - target.rho))
        res.append(spam_weight * (inverse.T @ model.effect - target.effect))
    return np.concatenate(res)


def find_gauge(model, target, spam_weight=0.0, preserve_tp=None):
    """
    G = exp(X) minimizing sum_gates ||G R G^-1 - R_target||_F^2 (plus optional SPAM
    terms), with every entry of X inside [-GAUGE_BOUND, GAUGE_BOUND]. Trace-preserving
    models get a trace-preserving gauge unless ``preserve_tp`` says otherwise.
    """
    if not all(np.all(np.isfinite(m)) for m in model.gates.values()):
        raise GaugeError("cannot gauge-optimize a model with non-finite gates")
    if preserve_tp is None:
        preserve_tp = is_tp_model(model)
    result = _gauge_search(_gauge_residuals, (model, target, spam_weight, preserve_tp), preserve_tp)
    gauge = gauge_matrix(result.x, preserve_tp)
    if not np.all(np.isfinite(gauge)) or abs(np.linalg.det(gauge)) < MIN_GAUGE_DET:
        raise GaugeError(f"gauge optimization reached a singular transform (|det| = {abs(np.linalg.det(gauge)):.3e})")
    return gauge


def gauge_objective(model, target):
    return float(sum(np.sum((model.gates[k] - target.gates[k]) ** 2) for k in GATE_LABELS))


def gauge_optimize(model, target=None, spam_weight=0.0, preserve_tp=None):
    target = target or GateSetModel.target()
    return model.transform(find_gauge(model, target, spam_weight, preserve_tp))


# ---------------------------------------------------------------------------
# H2 projection


def project_simplex(v):
    """Euclidean projection onto the probability simplex, sort-based"""
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    css = np.cumsum(u)
    ind = np.arange(1, len(v) + 1)
    rho = np.nonzero(u - (css - 1.0) / ind > 0)[0][-1]
    theta = (css[rho] - 1.0) / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


def project_gate_h2(m, target_ptm):
    """Nearest Pauli-stochastic channel after the target Clifford, as diag(lambda) . C"""
    c = np.rint(np.asarray(target_ptm)).astype(int)
    m = np.asarray(m, dtype=float)
    columns = np.argmax(np.abs(c), axis=1)
    signs = c[np.arange(4), columns]
    eigenvalues = m[np.arange(4), columns] * signs
    eigenvalues[0] = 1.0
    probs = project_simplex(pauli_probs_from_eigenvalues(eigenvalues))
    return np.diag(eigenvalues_from_probs(probs)) @ c


def project_h2(model, targets=None):
    targets = targets or named_cliffords()
    gates = {label: project_gate_h2(model.gates[label], targets[label].ptm) for label in GATE_LABELS}
    return model.copy(gates=gates, param_count=H2_PARAM_COUNT, kind="h2")


def _h2_alignment_residuals(params, model, targets, preserve_tp):
    gauge, inverse = _gauge_pair(params, preserve_tp)
    res = []
    for label in GATE_LABELS:
        m = gauge @ model.gates[label] @ inverse
        res.append((m - project_gate_h2(m, targets[label].ptm)).ravel())
    return np.concatenate(res)


def fit_h2(h1, targets=None):
    """
    H2 estimate by projection only: gauge-fix H1 to the targets, move to the nearby gauge
    where the gates are closest to their own Pauli-Clifford projection, then project.
    SPAM is carried over from H1 in that gauge.
    """
    targets = targets or named_cliffords()
    preserve_tp = is_tp_model(h1)
    try:
        aligned = gauge_optimize(h1, GateSetModel.target(targets), preserve_tp=preserve_tp)
    except GaugeError as e:
        logger.warning("H2 gauge fixing failed, projecting H1 in its own gauge: %s", e)
        aligned = h1
    result = _gauge_search(_h2_alignment_residuals, (aligned, targets, preserve_tp), preserve_tp, max_nfev=400)
    try:
        aligned = aligned.transform(gauge_matrix(result.x, preserve_tp))
    except GaugeError:
        logger.warning("H2 gauge alignment was singular; projecting the target-gauge estimate")
    return project_h2(aligned, targets)


# ---------------------------------------------------------------------------
# degrees of freedom


def numerical_rank(m, tol=RANK_TOLERANCE):
    s = np.linalg.svd(np.asarray(m, dtype=float), compute_uv=False)
    if s.size == 0 or s.max() == 0.0:
        return 0
    return int(np.sum(s > tol * s.max()))


def gauge_jacobian(model):
    """(43, 12) derivative of the TP parameter vector along the TP-preserving gauge generators"""
    columns = []
    for a in range(1, 4):
        for b in range(4):
            x = np.zeros((4, 4))
            x[a, b] = 1.0
            parts = [(x @ model.gates[label] - model.gates[label] @ x)[1:].ravel() for label in GATE_LABELS]
            parts.append((x @ model.rho)[1:])
            parts.append(-x.T @ model.effect)
            columns.append(np.concatenate(parts))
    return np.array(columns).T


def h2_tangent(targets=None):
    """(43, 16) embedding of the H2 parameters (3 eigenvalues per gate, SPAM) into H1 parameters"""
    targets = targets or named_cliffords()
    t = np.zeros((H1_PARAM_COUNT, H2_PARAM_COUNT))
    for g, label in enumerate(GATE_LABELS):
        c = targets[label].ptm.astype(float)
        for p in range(1, 4):
            start = g * GATE_PARAMS + (p - 1) * 4
            t[start : start + 4, g * 3 + (p - 1)] = c[p]
    for j in range(7):
        t[N_GATES * GATE_PARAMS + j, N_GATES * 3 + j] = 1.0
    return t


def gauge_rank(model):
    return numerical_rank(gauge_jacobian(model))


def residual_gauge_rank(model, targets=None):
    """Dimension of the gauge directions that stay inside the H2 manifold"""
    jg = gauge_jacobian(model)
    t = h2_tangent(targets)
    return numerical_rank(jg) + numerical_rank(t) - numerical_rank(np.hstack([jg, t]))


def model_dof(kind, design=None, model=None, dataset=None, targets=None):
    """Free parameters of a hypothesis after removing gauge directions"""
    kind = kind.lower()
    if kind == "h0":
        if dataset is not None:
            return len(dataset)
        return len(design)
    model = model or GateSetModel.target(targets)
    if kind == "h1":
        return H1_PARAM_COUNT - gauge_rank(model)
    if kind == "h2":
        return H2_PARAM_COUNT - residual_gauge_rank(model, targets)
    raise ValueError(f"unknown hypothesis {kind!r}")
