"""
Noisy single-qubit simulator producing binomial shot counts for GST sequences.

Every gate is followed by a gate-independent error E = S . Rz(delta) . R_n(eps): a coherent
over-rotation about an axis tilted from X toward Z, a detuning phase delta that drifts
slowly with the global shot index, and a stochastic part S (depolarizing, dephasing,
amplitude damping). In pulse-level attachment the error sits on each physical X_pi/2
pulse of the diatomic decomposition instead, and Z-frame updates are perfect.
"""

import csv
import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from enum import StrEnum
from functools import cached_property
from pathlib import Path

import humanize
import numpy as np

from .errors import ConfigError, DatasetError
from .gst_design import SequenceSpec
from .pauli_algebra import N_CLIFFORDS, Clifford, clifford_tables, depolarizing_ptm, rotation_ptm
from .pfr import FramePolicy, diatomic_table, parse_gate, randomize_batch

logger = logging.getLogger(__name__)

PROBABILITY_CLAMP = 1e-12
CLAMP_WARN = 1e-12

# coherence preset: T1, T2 in seconds, one X_pi/2 pulse
PRESET_T1 = 10e-6
PRESET_T2 = 13e-6
PULSE_TIME = 50e-9
CLIFFORD_TIME = 2 * PULSE_TIME

IDEAL_RHO = (1 / math.sqrt(2), 0.0, 0.0, 1 / math.sqrt(2))
IDEAL_EFFECT = (1 / math.sqrt(2), 0.0, 0.0, -1 / math.sqrt(2))


class DriftKind(StrEnum):
    NONE = "none"
    SINUSOID = "sinusoid"
    RANDOM_WALK = "random-walk"


class Attachment(StrEnum):
    GATE = "gate"
    PULSE = "pulse"


class Mode(StrEnum):
    RANDOMIZED = "randomized"
    PLAIN = "plain"


def _digest(payload):
    return hashlib.sha256(json.dumps(payload, sort_keys=True, default=str).encode()).hexdigest()


def _check_probability(name, value):
    if not (math.isfinite(value) and 0.0 <= value <= 1.0):
        raise ConfigError(f"{name} must lie in [0, 1], got {value!r}")


@dataclass(frozen=True)
class DriftConfig:
    """Slow detuning-phase drift; ``period`` is measured in shots"""

    kind: DriftKind = DriftKind.NONE
    amplitude: float = 0.0
    period: float = 50_000
    seed: int = 0
    target: str = "detuning-phase"

    def __post_init__(self):
        object.__setattr__(self, "kind", DriftKind(self.kind))
        if not math.isfinite(self.amplitude):
            raise ConfigError(f"drift amplitude must be finite, got {self.amplitude!r}")
        if not self.period >= 1:
            raise ConfigError(f"drift period must be >= 1 shot, got {self.period!r}")
        if self.target != "detuning-phase":
            raise ConfigError(f"unsupported drift target {self.target!r}")

    @property
    def active(self):
        return self.kind is not DriftKind.NONE and self.amplitude != 0.0


@dataclass(frozen=True)
class NoiseConfig:
    overrotation_eps: float = 0.0
    axis_tilt: float = 0.0
    depolarizing_rate: float = 0.0
    amp_damping_gamma: float = 0.0
    dephasing_rate: float = 0.0
    drift: DriftConfig = field(default_factory=DriftConfig)
    attachment: Attachment = Attachment.GATE

    def __post_init__(self):
        object.__setattr__(self, "attachment", Attachment(self.attachment))
        if isinstance(self.drift, dict):
            object.__setattr__(self, "drift", DriftConfig(**self.drift))
        for name in ("overrotation_eps", "axis_tilt"):
            if not math.isfinite(getattr(self, name)):
                raise ConfigError(f"{name} must be finite")
        for name in ("depolarizing_rate", "amp_damping_gamma", "dephasing_rate"):
            _check_probability(name, getattr(self, name))

    @classmethod
    def from_coherence(cls, t1=PRESET_T1, t2=PRESET_T2, gate_time=CLIFFORD_TIME, **kwargs):
        """Amplitude damping and pure dephasing for one gate of duration ``gate_time``"""
        if t1 <= 0 or t2 <= 0 or t2 > 2 * t1:
            raise ConfigError(f"need 0 < T2 <= 2 T1, got T1={t1}, T2={t2}")
        gamma = 1.0 - math.exp(-gate_time / t1)
        dephasing_rate_inv = 1.0 / t2 - 1.0 / (2.0 * t1)
        q = 0.5 * (1.0 - math.exp(-gate_time * dephasing_rate_inv))
        return cls(amp_damping_gamma=gamma, dephasing_rate=q, **kwargs)

    @property
    def is_ideal(self):
        return (
            self.overrotation_eps == 0.0
            and self.depolarizing_rate == 0.0
            and self.amp_damping_gamma == 0.0
            and self.dephasing_rate == 0.0
            and not self.drift.active
        )

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        drift = d.pop("drift", {}) or {}
        return cls(drift=DriftConfig(**drift), **d)

    def digest(self):
        return _digest(self.to_dict())


@dataclass(frozen=True)
class SpamConfig:
    rho: tuple[float, ...] = IDEAL_RHO
    effect: tuple[float, ...] = IDEAL_EFFECT
    prep_error: float = 0.0
    meas_error: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "rho", tuple(float(x) for x in self.rho))
        object.__setattr__(self, "effect", tuple(float(x) for x in self.effect))
        if len(self.rho) != 4 or len(self.effect) != 4:
            raise ConfigError("rho and effect must be Pauli-basis 4-vectors")
        _check_probability("prep_error", self.prep_error)
        _check_probability("meas_error", self.meas_error)
        r = np.asarray(self.rho)
        if abs(r[0] - 1 / math.sqrt(2)) > 1e-9 or np.linalg.norm(r[1:]) > 1 / math.sqrt(2) + 1e-9:
            raise ConfigError(f"rho is not a density matrix: {self.rho}")
        e = np.asarray(self.effect)
        lo, hi = (e[0] - np.linalg.norm(e[1:])) / math.sqrt(2), (e[0] + np.linalg.norm(e[1:])) / math.sqrt(2)
        if lo < -1e-9 or hi > 1 + 1e-9:
            raise ConfigError(f"effect is not a POVM element: {self.effect}")

    @property
    def rho_vector(self):
        """Prepared state including preparation bit-flip errors"""
        r = np.asarray(self.rho)
        flipped = r * (1.0, 1.0, -1.0, -1.0)
        return (1.0 - self.prep_error) * r + self.prep_error * flipped

    @property
    def effect_vector(self):
        """Measured effect including readout bit-flip errors"""
        e = np.asarray(self.effect)
        complement = np.array([math.sqrt(2), 0.0, 0.0, 0.0]) - e
        return (1.0 - self.meas_error) * e + self.meas_error * complement

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def digest(self):
        return _digest(self.to_dict())


# ---------------------------------------------------------------------------
# channels


def _rescale(rate, fraction, scale=1.0):
    """Per-Clifford error rate over ``fraction`` of the Clifford, keeping 1 - scale * rate = exp(-t / T)"""
    factor = 1.0 - scale * rate
    return (1.0 - math.copysign(abs(factor) ** fraction, factor)) / scale


def stochastic_ptm(noise, fraction=1.0):
    """
    Depolarizing, dephasing and amplitude damping over ``fraction`` of one Clifford
    duration; the configured rates are per Clifford.
    """
    p, q, g = noise.depolarizing_rate, noise.dephasing_rate, noise.amp_damping_gamma
    if fraction != 1.0:
        p, q, g = _rescale(p, fraction), _rescale(q, fraction, scale=2.0), _rescale(g, fraction)
    dephasing = np.diag([1.0, 1.0 - 2.0 * q, 1.0 - 2.0 * q, 1.0])
    damping = np.array(
        [
            [1.0, 0.0, 0.0, 0.0],
            [0.0, math.sqrt(1.0 - g), 0.0, 0.0],
            [0.0, 0.0, math.sqrt(1.0 - g), 0.0],
            [g, 0.0, 0.0, 1.0 - g],
        ]
    )
    return damping @ dephasing @ depolarizing_ptm(p)


def error_axis(noise):
    return (math.cos(noise.axis_tilt), 0.0, math.sin(noise.axis_tilt))


def rz_ptm(angle):
    return rotation_ptm((0.0, 0.0, 1.0), angle)


class ChannelModel:
    """Noise-dependent matrices, computed once per NoiseConfig"""

    def __init__(self, noise):
        self.noise = noise

    @cached_property
    def stochastic(self):
        return stochastic_ptm(self.noise)

    @cached_property
    def pulse_stochastic(self):
        """Stochastic error of one X_pi/2 pulse, over PULSE_TIME rather than a whole Clifford"""
        return stochastic_ptm(self.noise, PULSE_TIME / CLIFFORD_TIME)

    @cached_property
    def coherent(self):
        return rotation_ptm(error_axis(self.noise), self.noise.overrotation_eps)

    @cached_property
    def noisy_x90(self):
        return rotation_ptm(error_axis(self.noise), math.pi / 2 + self.noise.overrotation_eps)

    @cached_property
    def coherent_cliffords(self):
        """(24, 4, 4): coherent error after each ideal Clifford"""
        return np.einsum("ij,cjk->cik", self.coherent, clifford_tables().ptms.astype(float))

    @cached_property
    def diatomic_angles(self):
        """(24, 3) angles (theta1, theta2, theta3) in time order"""
        table = diatomic_table()
        return np.array([table[c][::-1] for c in range(N_CLIFFORDS)])

    def error_ptm(self, drift_value=0.0):
        return self.stochastic @ rz_ptm(drift_value) @ self.coherent

    def gate_channel(self, clifford, drift_value=0.0):
        if self.noise.attachment is Attachment.GATE:
            return self.error_ptm(drift_value) @ clifford.ptm.astype(float)
        pulse = self.pulse_stochastic @ rz_ptm(drift_value) @ self.noisy_x90
        theta1, theta2, theta3 = self.diatomic_angles[clifford.idx]
        return rz_ptm(theta3) @ pulse @ rz_ptm(theta2) @ pulse @ rz_ptm(theta1)


def resolve_gate(label):
    if isinstance(label, Clifford):
        return label
    if isinstance(label, (int, np.integer)):
        return Clifford(int(label))
    return parse_gate(label)


def gate_indices(circuit):
    if isinstance(circuit, SequenceSpec):
        circuit = circuit.flat
    return np.array([resolve_gate(g).idx for g in circuit], dtype=np.int64)


def gate_channel(label, noise, drift_value=0.0):
    """Noisy PTM of one gate at a fixed detuning phase"""
    return ChannelModel(noise).gate_channel(resolve_gate(label), drift_value)


def _clamp(p, where):
    excess = float(np.max(np.maximum(p - 1.0, -p), initial=0.0))
    if excess > CLAMP_WARN:
        logger.warning("%s: probability outside [0, 1] by %.3e, clamped", where, excess)
    elif excess > 0.0:
        logger.debug("%s: clamped probability excess %.3e", where, excess)
    return np.clip(p, 0.0, 1.0)


def sequence_probability(circuit, noise, spam, drift_value=0.0):
    """p = <effect| R_L ... R_1 |rho> for a circuit listed in application order"""
    model = ChannelModel(noise)
    state = spam.rho_vector
    for idx in gate_indices(circuit):
        state = model.gate_channel(Clifford(int(idx)), drift_value) @ state
    return float(_clamp(np.array([spam.effect_vector @ state]), "sequence_probability")[0])


def _rotate_xy(states, cos, sin):
    x = states[:, 1].copy()
    y = states[:, 2]
    states[:, 1] = cos * x - sin * y
    states[:, 2] = sin * x + cos * y


def shot_probabilities(gates, drift_values, noise, spam, model=None):
    """
    Outcome-1 probability of every shot. ``gates`` is either one circuit (L,) shared by all
    shots or per-shot circuits (n, L) of Clifford indices; ``drift_values`` has one entry per shot.
    """
    model = model or ChannelModel(noise)
    gates = np.asarray(gates, dtype=np.int64)
    drift_values = np.asarray(drift_values, dtype=float)
    n = drift_values.shape[0]
    states = np.tile(spam.rho_vector, (n, 1))
    cos_d, sin_d = np.cos(drift_values), np.sin(drift_values)
    stochastic_t = (model.stochastic if noise.attachment is Attachment.GATE else model.pulse_stochastic).T
    per_shot = gates.ndim == 2
    length = gates.shape[-1]

    if noise.attachment is Attachment.GATE:
        mats = model.coherent_cliffords
        for i in range(length):
            if per_shot:
                states = np.einsum("nij,nj->ni", mats[gates[:, i]], states)
            else:
                states = states @ mats[gates[i]].T
            _rotate_xy(states, cos_d, sin_d)
            states = states @ stochastic_t
    else:
        x90_t = model.noisy_x90.T
        for i in range(length):
            angles = model.diatomic_angles[gates[:, i] if per_shot else np.full(n, gates[i])]
            for j in range(3):
                _rotate_xy(states, np.cos(angles[:, j]), np.sin(angles[:, j]))
                if j == 2:
                    break
                states = states @ x90_t
                _rotate_xy(states, cos_d, sin_d)
                states = states @ stochastic_t

    return _clamp(states @ spam.effect_vector, "shot_probabilities")


# ---------------------------------------------------------------------------
# drift


def drift_trajectory(length, drift):
    """Drift value at shot indices 0 .. length-1"""
    index = np.arange(length, dtype=float)
    if not drift.active:
        return np.zeros(length)
    if drift.kind is DriftKind.SINUSOID:
        return drift.amplitude * np.sin(2.0 * np.pi * index / drift.period)
    steps = np.random.default_rng(drift.seed).normal(0.0, drift.amplitude / math.sqrt(drift.period), size=max(length - 1, 0))
    return np.concatenate(([0.0], np.cumsum(steps)))[:length]


def drift_value(shot_index, drift):
    """Detuning phase at one shot index; random walks are the cumulative sum of seeded Gaussian steps"""
    if shot_index < 0:
        raise ValueError("shot index must be non-negative")
    if drift.active and drift.kind is DriftKind.SINUSOID:
        return float(drift.amplitude * np.sin(2.0 * np.pi * float(shot_index) / drift.period))
    return float(drift_trajectory(shot_index + 1, drift)[shot_index])


# ---------------------------------------------------------------------------
# interleaved schedule


@dataclass(frozen=True)
class InterleaveSchedule:
    """
    Shots run in rounds; each round gives every mode ``block`` shots of every sequence,
    mode-major, then sequence-major, then shot. All modes share one drift clock.
    """

    block: int = 10
    modes: tuple[Mode, ...] = (Mode.RANDOMIZED, Mode.PLAIN)

    def __post_init__(self):
        object.__setattr__(self, "modes", tuple(Mode(m) for m in self.modes))
        if self.block < 1:
            raise ConfigError(f"interleave block must be >= 1, got {self.block}")
        if len(set(self.modes)) != len(self.modes) or not self.modes:
            raise ConfigError(f"invalid schedule modes {self.modes}")

    def shot_indices(self, mode, position, n_sequences, n_shots):
        """Global shot indices of the ``n_shots`` shots of sequence ``position`` in ``mode``"""
        a = self.modes.index(Mode(mode))
        j = np.arange(n_shots, dtype=np.int64)
        rounds, within = np.divmod(j, self.block)
        round_size = len(self.modes) * self.block * n_sequences
        return rounds * round_size + a * self.block * n_sequences + position * self.block + within

    def total_shots(self, n_sequences, n_shots):
        rounds = -(-n_shots // self.block)
        return rounds * len(self.modes) * self.block * n_sequences

    def to_dict(self):
        return {"block": self.block, "modes": [m.value for m in self.modes], "ordering": "round/mode/sequence/shot"}


# ---------------------------------------------------------------------------
# datasets


@dataclass
class Dataset:
    sequence_ids: np.ndarray
    n: np.ndarray
    k: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.sequence_ids = np.asarray(self.sequence_ids, dtype=np.int64)
        self.n = np.asarray(self.n)
        self.k = np.asarray(self.k)
        if not (self.sequence_ids.shape == self.n.shape == self.k.shape):
            raise DatasetError("sequence_ids, n and k must have equal length")
        if np.any(self.n < 1):
            raise DatasetError("every row needs n >= 1")
        if np.any(self.k < 0) or np.any(self.k > self.n):
            raise DatasetError("every row needs 0 <= k <= n")

    def __len__(self):
        return len(self.sequence_ids)

    @property
    def total_shots(self):
        return int(np.sum(self.n))

    @property
    def frequencies(self):
        return self.k / self.n

    @property
    def randomized(self):
        return bool(self.metadata.get("randomized", False))

    def subset(self, ids):
        wanted = set(int(i) for i in ids)
        mask = np.array([i in wanted for i in self.sequence_ids], dtype=bool)
        return Dataset(self.sequence_ids[mask], self.n[mask], self.k[mask], dict(self.metadata))

    def by_id(self):
        return {int(i): (self.n[row], self.k[row]) for row, i in enumerate(self.sequence_ids)}

    @classmethod
    def from_probabilities(cls, sequence_ids, probabilities, n_shots, metadata=None):
        """Expected counts k = n p; the infinite-shot limit used for exact recovery checks"""
        p = np.asarray(probabilities, dtype=float)
        n = np.full(p.shape, float(n_shots))
        return cls(np.asarray(sequence_ids), n, n * p, {"exact": True, **(metadata or {})})

    def to_csv(self, path):
        path = Path(path)
        exact = self.metadata.get("exact", False)
        with open(path, "w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(["sequence_id", "n", "k"])
            for i, n, k in zip(self.sequence_ids, self.n, self.k, strict=True):
                writer.writerow([int(i), repr(float(n)) if exact else int(n), repr(float(k)) if exact else int(k)])
        with open(path.with_suffix(".json"), "w") as f:
            json.dump(self.metadata, f, indent=1, sort_keys=True, default=str)
        return path

    @classmethod
    def from_csv(cls, path):
        path = Path(path)
        try:
            with open(path, newline="") as f:
                rows = list(csv.DictReader(f))
            sidecar = path.with_suffix(".json")
            metadata = json.loads(sidecar.read_text()) if sidecar.exists() else {}
        except (OSError, ValueError) as e:
            raise DatasetError(f"cannot read dataset {path}: {e}") from e
        number = float if metadata.get("exact") else int
        return cls(
            np.array([int(r["sequence_id"]) for r in rows], dtype=np.int64),
            np.array([number(r["n"]) for r in rows]),
            np.array([number(r["k"]) for r in rows]),
            metadata,
        )


def _as_circuits(sequences):
    out = []
    for s in sequences:
        if isinstance(s, SequenceSpec):
            out.append((s.id, gate_indices(s.flat)))
        else:
            out.append((len(out), gate_indices(s)))
    return out


def sample_datasets(
    sequences,
    n_shots,
    noise,
    spam,
    seed,
    schedule=None,
    n_randomizations=None,
    policy=FramePolicy.ABSORB,
    modes=None,
):
    """
    Run the interleaved schedule and return one Dataset per requested mode. Each
    (mode, sequence) pair owns the generator stream default_rng([seed, mode, sequence]),
    so sampling a subset of modes reproduces the same counts.
    """
    if n_shots < 1:
        raise DatasetError("n_shots must be >= 1")
    schedule = schedule or InterleaveSchedule()
    modes = tuple(Mode(m) for m in (modes or schedule.modes))
    circuits = _as_circuits(sequences)
    n_randomizations = n_randomizations or n_shots
    model = ChannelModel(noise)
    trajectory = drift_trajectory(schedule.total_shots(len(circuits), n_shots), noise.drift)

    datasets = {}
    for mode in modes:
        mode_index = list(Mode).index(mode)
        ids, ks = [], []
        for position, (seq_id, gates) in enumerate(circuits):
            rng = np.random.default_rng([seed, mode_index, seq_id])
            drift = trajectory[schedule.shot_indices(mode, position, len(circuits), n_shots)]
            flips = np.zeros(n_shots, dtype=bool)
            if mode is Mode.RANDOMIZED and len(gates):
                batch = randomize_batch(gates, rng, n_randomizations, policy)
                rows = np.arange(n_shots) % n_randomizations
                p = shot_probabilities(batch.gates[rows], drift, noise, spam, model)
                flips = batch.flips()[rows]
            else:
                p = shot_probabilities(gates, drift, noise, spam, model)
            p = np.clip(p, PROBABILITY_CLAMP, 1.0 - PROBABILITY_CLAMP)
            outcomes = (rng.random(n_shots) < p) ^ flips
            ids.append(seq_id)
            ks.append(int(outcomes.sum()))
        metadata = {
            "seed": int(seed),
            "mode": mode.value,
            "randomized": mode is Mode.RANDOMIZED,
            "noise_digest": noise.digest(),
            "spam_digest": spam.digest(),
            "n_shots": int(n_shots),
            "n_randomizations": int(n_randomizations) if mode is Mode.RANDOMIZED else None,
            "frame_policy": FramePolicy(policy).value,
            "schedule": schedule.to_dict(),
        }
        datasets[mode] = Dataset(np.array(ids), np.full(len(ids), n_shots), np.array(ks), metadata)
        logger.info(
            "sampled %s shots (%s mode, %s sequences)",
            humanize.intcomma(datasets[mode].total_shots),
            mode.value,
            humanize.intcomma(len(ids)),
        )
    return datasets


def sample_dataset(sequences, n_shots, noise, spam, seed, mode=Mode.PLAIN, schedule=None, n_randomizations=None, policy=FramePolicy.ABSORB):
    return sample_datasets(sequences, n_shots, noise, spam, seed, schedule, n_randomizations, policy, modes=(mode,))[Mode(mode)]
