"""
Pauli-frame randomizing compiler.

A Clifford circuit C_L ... C_1 is rewritten as D_L ... D_1 with D_i = C_i P_i for uniformly
random Paulis P_i. The last gate absorbs the compensating frame P_{L+1}, so the randomized
circuit implements the same ideal channel as the source.
"""

import itertools
import re
from dataclasses import dataclass, field
from enum import Enum, StrEnum
from functools import cache
from typing import NamedTuple

import numpy as np

from .errors import CircuitError
from .pauli_algebra import (
    IDENTITY,
    N_CLIFFORDS,
    X90_UNITARY,
    Z_AXIS,
    Clifford,
    Pauli,
    clifford_tables,
    named_cliffords,
    pauli_mul,
    ptm_from_unitary,
    rotation_ptm,
    rotation_unitary,
)

EMPTY_CIRCUIT_TOKEN = "{}"


class FramePolicy(StrEnum):
    """How the final Pauli frame is handled"""

    ABSORB = "absorb"  # P_{L+1} cancels the accumulated frame and is folded into D_L
    FLIP = "flip"  # P_{L+1} is random too; the residual frame is undone by flipping the outcome


@dataclass(frozen=True)
class CliffordCircuit:
    gates: tuple[Clifford, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "gates", tuple(_as_clifford(g) for g in self.gates))

    def __len__(self):
        return len(self.gates)

    def __iter__(self):
        return iter(self.gates)

    @property
    def indices(self):
        return np.array([g.idx for g in self.gates], dtype=np.int64)

    def ptm(self):
        """Exact integer PTM of the whole circuit, first gate applied first"""
        return composed_ptm(self.indices)

    @classmethod
    def parse(cls, text):
        return parse_circuit(text)

    def to_text(self):
        return format_circuit(self)


@dataclass(frozen=True)
class RandomizedCircuit:
    gates: tuple[Clifford, ...]
    frame_trace: tuple[Pauli, ...]
    final_frame: Pauli
    rng_seed: int
    policy: FramePolicy = FramePolicy.ABSORB
    # frame left in front of the measurement, identity under ABSORB
    residual_frame: Pauli = Pauli.I

    def __len__(self):
        return len(self.gates)

    @property
    def circuit(self):
        return CliffordCircuit(self.gates)

    @property
    def flips_outcome(self):
        return self.residual_frame in (Pauli.X, Pauli.Y)


class PulseKind(Enum):
    X90 = "X90"
    Z = "Z"


class Pulse(NamedTuple):
    kind: PulseKind
    angle: float = 0.0

    def ptm(self):
        if self.kind is PulseKind.X90:
            return ptm_from_unitary(X90_UNITARY)
        return rotation_ptm(Z_AXIS, self.angle)

    def __str__(self):
        if self.kind is PulseKind.X90:
            return "X90"
        return f"Z({self.angle:+.4f})"


@dataclass(frozen=True)
class PulseProgram:
    """Pulses in time order; the first pulse acts first"""

    pulses: tuple[Pulse, ...]
    angles: tuple[float, float, float] = field(default=(0.0, 0.0, 0.0), compare=False)

    @property
    def n_physical(self):
        return sum(p.kind is PulseKind.X90 for p in self.pulses)

    @property
    def n_virtual(self):
        return sum(p.kind is PulseKind.Z for p in self.pulses)

    def ptm(self):
        m = np.eye(4)
        for pulse in self.pulses:
            m = pulse.ptm() @ m
        return m

    def __str__(self):
        return " ".join(str(p) for p in self.pulses)


# ---------------------------------------------------------------------------
# composition helpers


def _as_clifford(gate):
    if isinstance(gate, Clifford):
        return gate
    if isinstance(gate, str):
        return parse_gate(gate)
    return Clifford(int(gate))


@cache
def pauli_clifford_indices():
    """Clifford index of each Pauli, in Pauli label order"""
    return np.array([Clifford.from_pauli(p).idx for p in Pauli], dtype=np.int64)


def composed_ptm(indices):
    ptms = clifford_tables().ptms
    out = np.eye(4, dtype=np.int64)
    for idx in indices:
        out = ptms[idx].astype(np.int64) @ out
    return out


def composed_index(indices):
    compose = clifford_tables().compose
    out = IDENTITY.idx
    for idx in indices:
        out = compose[idx, out]
    return int(out)


# ---------------------------------------------------------------------------
# randomization


def frame_correction(cliffords, paulis):
    """
    Pauli P_{L+1} that cancels the frame accumulated by ``paulis`` through ``cliffords``.

    P_{1:1} = P_1, P_{n:1} = P_n . (P_{n-1:1} conjugated by C_{n-1}), and the result is
    P_{L:1} conjugated by C_L.
    """
    cliffords = list(cliffords)
    paulis = list(paulis)
    if len(cliffords) != len(paulis):
        raise CircuitError(f"frame length mismatch: {len(cliffords)} Cliffords, {len(paulis)} Paulis")
    if not cliffords:
        return Pauli.I
    frame = Pauli(paulis[0])
    for previous, pauli in zip(cliffords[:-1], paulis[1:], strict=True):
        frame = pauli_mul(pauli, previous.conjugate(frame))
    return cliffords[-1].conjugate(frame)


def apply_frames(circuit, paulis, final_frame=None, rng_seed=0, policy=FramePolicy.ABSORB):
    """
    Build the randomized circuit for explicit frame draws. ``final_frame`` overrides the
    computed correction; under FLIP the difference becomes the residual frame.
    """
    policy = FramePolicy(policy)
    circuit = circuit if isinstance(circuit, CliffordCircuit) else CliffordCircuit(circuit)
    if len(circuit) == 0:
        raise CircuitError("nothing to randomize")
    paulis = tuple(Pauli(p) for p in paulis)
    correction = frame_correction(circuit.gates, paulis)
    final = correction if final_frame is None else Pauli(final_frame)
    residual = pauli_mul(final, correction) if policy is FramePolicy.FLIP else Pauli.I

    gates = [c @ Clifford.from_pauli(p) for c, p in zip(circuit.gates, paulis, strict=True)]
    gates[-1] = Clifford.from_pauli(final) @ gates[-1]
    return RandomizedCircuit(tuple(gates), paulis, final, int(rng_seed), policy, residual)


def _child_seed(rng):
    return int(rng.integers(0, 2**63 - 1, dtype=np.int64))


def randomize(circuit, rng, policy=FramePolicy.ABSORB):
    """Draw P_1 ... P_L uniformly (and P_{L+1} under FLIP) from a child stream of ``rng``"""
    policy = FramePolicy(policy)
    circuit = circuit if isinstance(circuit, CliffordCircuit) else CliffordCircuit(circuit)
    if len(circuit) == 0:
        raise CircuitError("nothing to randomize")
    seed = _child_seed(rng)
    child = np.random.default_rng(seed)
    paulis = child.integers(0, 4, size=len(circuit))
    final = Pauli(int(child.integers(0, 4))) if policy is FramePolicy.FLIP else None
    return apply_frames(circuit, paulis, final_frame=final, rng_seed=seed, policy=policy)


class RandomizationBatch(NamedTuple):
    gates: np.ndarray  # (count, L) Clifford indices
    frames: np.ndarray  # (count, L) Pauli labels
    final_frames: np.ndarray  # (count,)
    residual_frames: np.ndarray  # (count,)
    rng_seed: int
    policy: FramePolicy = FramePolicy.ABSORB

    @property
    def count(self):
        return self.gates.shape[0]

    def flips(self):
        return (self.residual_frames == Pauli.X) | (self.residual_frames == Pauli.Y)

    def circuit(self, row):
        return RandomizedCircuit(
            tuple(Clifford(int(i)) for i in self.gates[row]),
            tuple(Pauli(int(p)) for p in self.frames[row]),
            Pauli(int(self.final_frames[row])),
            self.rng_seed,
            self.policy,
            Pauli(int(self.residual_frames[row])),
        )


_PAULI_MUL = np.array([[pauli_mul(a, b) for b in Pauli] for a in Pauli], dtype=np.int64)


def randomize_batch(circuit, rng, count, policy=FramePolicy.ABSORB):
    """``count`` independent randomizations of one circuit, computed with table lookups"""
    policy = FramePolicy(policy)
    circuit = circuit if isinstance(circuit, CliffordCircuit) else CliffordCircuit(circuit)
    if len(circuit) == 0:
        raise CircuitError("nothing to randomize")
    tables = clifford_tables()
    conj = tables.conj.astype(np.int64)
    compose = tables.compose
    pauli_idx = pauli_clifford_indices()
    source = circuit.indices

    seed = _child_seed(rng)
    child = np.random.default_rng(seed)
    frames = child.integers(0, 4, size=(count, len(source)))

    frame = frames[:, 0]
    for n in range(1, len(source)):
        frame = _PAULI_MUL[frames[:, n], conj[source[n - 1], frame]]
    correction = conj[source[-1], frame]

    if policy is FramePolicy.FLIP:
        final = child.integers(0, 4, size=count)
        residual = _PAULI_MUL[final, correction]
    else:
        final = correction
        residual = np.zeros(count, dtype=np.int64)

    gates = compose[source[None, :], pauli_idx[frames]]
    gates[:, -1] = compose[pauli_idx[final], gates[:, -1]]
    return RandomizationBatch(gates, frames, final, residual, seed, policy)


def verify_equivalence(source, randomized):
    """True iff the randomized gates compose to the source channel, up to the recorded residual frame"""
    source = source if isinstance(source, CliffordCircuit) else CliffordCircuit(source)
    if len(source) != len(randomized.gates):
        return False
    expected = Clifford.from_pauli(randomized.residual_frame).ptm.astype(np.int64) @ source.ptm()
    actual = composed_ptm([g.idx for g in randomized.gates])
    return bool(np.array_equal(actual, expected))


# ---------------------------------------------------------------------------
# diatomic lowering

Z_ANGLES = (0.0, np.pi / 2, np.pi, -np.pi / 2)


def _program(angles):
    theta3, theta2, theta1 = angles
    pulses = []
    for angle in (theta1, None, theta2, None, theta3):
        if angle is None:
            pulses.append(Pulse(PulseKind.X90))
        elif angle != 0.0:
            pulses.append(Pulse(PulseKind.Z, angle))
    return PulseProgram(tuple(pulses), (theta3, theta2, theta1))


@cache
def diatomic_table():
    """Canonical (theta3, theta2, theta1) per Clifford: first match of an exhaustive angle search"""
    x90 = X90_UNITARY
    table = {}
    for angles in itertools.product(Z_ANGLES, repeat=3):
        theta3, theta2, theta1 = angles
        u = (
            rotation_unitary(Z_AXIS, theta3)
            @ x90
            @ rotation_unitary(Z_AXIS, theta2)
            @ x90
            @ rotation_unitary(Z_AXIS, theta1)
        )
        idx = int(np.argmax([np.abs(np.trace(c.conj().T @ u)) for c in clifford_tables().unitaries]))
        table.setdefault(idx, angles)
    if len(table) != N_CLIFFORDS:
        raise RuntimeError(f"diatomic search covered only {len(table)} Cliffords")
    return table


def diatomic_compile(clifford):
    return _program(diatomic_table()[clifford.idx])


def compile_circuit(circuit):
    return [diatomic_compile(c) for c in circuit]


# ---------------------------------------------------------------------------
# text formats

_TOKEN = re.compile(r"^C(\d+)$")


def parse_gate(token):
    names = named_cliffords()
    if token in names:
        return names[token]
    match = _TOKEN.match(token)
    if match and int(match.group(1)) < N_CLIFFORDS:
        return Clifford(int(match.group(1)))
    raise CircuitError(f"unknown gate token: {token!r}")


def format_gate(clifford):
    for name, c in named_cliffords().items():
        if c == clifford:
            return name
    return str(clifford)


def parse_circuit(text):
    tokens = text.split()
    if tokens == [EMPTY_CIRCUIT_TOKEN]:
        return CliffordCircuit(())
    return CliffordCircuit(tuple(parse_gate(t) for t in tokens))


def format_circuit(circuit):
    if len(circuit) == 0:
        return EMPTY_CIRCUIT_TOKEN
    return " ".join(format_gate(c) for c in circuit)


def read_circuits(path):
    with open(path) as f:
        return [parse_circuit(line) for line in f if line.strip() and not line.lstrip().startswith("#")]


def write_circuits(path, circuits):
    with open(path, "w") as f:
        for circuit in circuits:
            f.write(format_circuit(circuit) + "\n")


def format_randomized(rc):
    frames = "".join(p.name for p in rc.frame_trace)
    gates = " ".join(str(g) for g in rc.gates)
    return (
        f"seed={rc.rng_seed} policy={rc.policy.value} frames={frames} final={rc.final_frame.name} "
        f"residual={rc.residual_frame.name} gates={gates}"
    )


def parse_randomized(line):
    head, sep, gates = line.strip().partition(" gates=")
    if not sep:
        raise CircuitError(f"randomized circuit line has no gates field: {line!r}")
    try:
        fields = dict(item.split("=", 1) for item in head.split())
        return RandomizedCircuit(
            gates=tuple(parse_gate(t) for t in gates.split()),
            frame_trace=tuple(Pauli.parse(ch) for ch in fields["frames"]),
            final_frame=Pauli.parse(fields["final"]),
            rng_seed=int(fields["seed"]),
            policy=FramePolicy(fields.get("policy", FramePolicy.ABSORB)),
            residual_frame=Pauli.parse(fields.get("residual", "I")),
        )
    except (KeyError, ValueError) as e:
        raise CircuitError(f"malformed randomized circuit line: {line!r}") from e
