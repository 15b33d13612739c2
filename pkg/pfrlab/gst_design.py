"""
Long-sequence GST experiment design: fiducials, germs and germ powers flattened into a
deduplicated, deterministically ordered sequence list.
"""

import json
import logging
from dataclasses import dataclass, field
from functools import cached_property

from .errors import DesignError
from .pfr import EMPTY_CIRCUIT_TOKEN

logger = logging.getLogger(__name__)

GATE_LABELS = ("Gi", "Gx", "Gy")

FIDUCIALS = (
    (),
    ("Gx",),
    ("Gy",),
    ("Gx", "Gx"),
    ("Gx", "Gx", "Gx"),
    ("Gy", "Gy", "Gy"),
)

GERMS = (
    ("Gi",),
    ("Gx",),
    ("Gy",),
    ("Gx", "Gy"),
    ("Gx", "Gy", "Gi"),
    ("Gx", "Gi", "Gy"),
    ("Gx", "Gi", "Gi"),
    ("Gy", "Gi", "Gi"),
    ("Gx", "Gx", "Gi", "Gy"),
    ("Gx", "Gy", "Gy", "Gi"),
    ("Gx", "Gx", "Gy", "Gx", "Gy", "Gy"),
)

DEFAULT_L_MAX = 64


@dataclass(frozen=True)
class SequenceSpec:
    """
    One GST circuit: prep fiducial, then the germ repeated power // len(germ) times,
    then the measurement fiducial. Fiducial-pair circuits have an empty germ and power 0.
    """

    id: int
    prep: tuple[str, ...]
    germ: tuple[str, ...]
    power: int
    meas: tuple[str, ...]
    flat: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self):
        if not self.flat:
            object.__setattr__(self, "flat", expand(self))

    @property
    def reps(self):
        return self.power // len(self.germ) if self.germ else 0

    @property
    def structure(self):
        return (self.prep, self.germ, self.power, self.meas)

    def to_dict(self):
        return {
            "id": self.id,
            "prep": list(self.prep),
            "germ": list(self.germ),
            "power": self.power,
            "meas": list(self.meas),
            "flat": list(self.flat),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            id=int(d["id"]),
            prep=tuple(d["prep"]),
            germ=tuple(d["germ"]),
            power=int(d["power"]),
            meas=tuple(d["meas"]),
            flat=tuple(d["flat"]),
        )


def expand(spec):
    """Flat gate list of a sequence, in application order prep -> germ block -> meas"""
    reps = spec.power // len(spec.germ) if spec.germ else 0
    return tuple(spec.prep) + tuple(spec.germ) * reps + tuple(spec.meas)


@dataclass(frozen=True)
class GstDesign:
    gate_labels: tuple[str, ...]
    prep_fiducials: tuple[tuple[str, ...], ...]
    meas_fiducials: tuple[tuple[str, ...], ...]
    germs: tuple[tuple[str, ...], ...]
    max_lengths: tuple[int, ...]
    sequences: tuple[SequenceSpec, ...]

    def __len__(self):
        return len(self.sequences)

    @cached_property
    def _by_flat(self):
        return {s.flat: s.id for s in self.sequences}

    def index_of(self, flat):
        return self._by_flat[tuple(flat)]

    def __contains__(self, flat):
        return tuple(flat) in self._by_flat

    @property
    def l_max(self):
        return self.max_lengths[-1]

    def stage_ids(self, max_power):
        """Ids of sequences whose germ power is at most ``max_power``"""
        return [s.id for s in self.sequences if s.power <= max_power]

    def max_flat_length(self):
        return max(len(s.flat) for s in self.sequences)

    def to_dict(self):
        return {
            "gate_labels": list(self.gate_labels),
            "prep_fiducials": [list(f) for f in self.prep_fiducials],
            "meas_fiducials": [list(f) for f in self.meas_fiducials],
            "germs": [list(g) for g in self.germs],
            "max_lengths": list(self.max_lengths),
            "sequences": [s.to_dict() for s in self.sequences],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            gate_labels=tuple(d["gate_labels"]),
            prep_fiducials=tuple(tuple(f) for f in d["prep_fiducials"]),
            meas_fiducials=tuple(tuple(f) for f in d["meas_fiducials"]),
            germs=tuple(tuple(g) for g in d["germs"]),
            max_lengths=tuple(int(x) for x in d["max_lengths"]),
            sequences=tuple(SequenceSpec.from_dict(s) for s in d["sequences"]),
        )


def max_lengths_for(l_max):
    if not isinstance(l_max, int) or l_max < 1 or l_max & (l_max - 1):
        raise DesignError(f"L_max must be a power of two, got {l_max!r}")
    return tuple(1 << k for k in range(l_max.bit_length()))


def standard_design(l_max=DEFAULT_L_MAX, fiducials=FIDUCIALS, germs=GERMS):
    """
    Standard single-qubit design. Ordering: fiducial pairs (prep-major), then lengths
    ascending, then germ, prep and measurement fiducial. The first structure producing a
    given flat circuit is kept.
    """
    lengths = max_lengths_for(l_max)
    seen = set()
    sequences = []

    def add(prep, germ, power, meas):
        spec = SequenceSpec(len(sequences), prep, germ, power, meas)
        if spec.flat in seen:
            return
        seen.add(spec.flat)
        sequences.append(spec)

    for prep in fiducials:
        for meas in fiducials:
            add(prep, (), 0, meas)
    for length in lengths:
        for germ in germs:
            if length // len(germ) == 0:
                continue
            for prep in fiducials:
                for meas in fiducials:
                    add(prep, germ, length, meas)

    design = GstDesign(GATE_LABELS, tuple(fiducials), tuple(fiducials), tuple(germs), lengths, tuple(sequences))
    logger.debug("design L_max=%d: %d sequences, longest %d gates", l_max, len(design), design.max_flat_length())
    return design


def format_flat(flat):
    return " ".join(flat) if flat else EMPTY_CIRCUIT_TOKEN


def save_design(design, path):
    with open(path, "w") as f:
        json.dump(design.to_dict(), f, indent=1)


def load_design(path):
    try:
        with open(path) as f:
            return GstDesign.from_dict(json.load(f))
    except (OSError, KeyError, ValueError) as e:
        raise DesignError(f"cannot read design {path}: {e}") from e


def write_circuit_list(design, path):
    with open(path, "w") as f:
        for spec in design.sequences:
            f.write(format_flat(spec.flat) + "\n")
