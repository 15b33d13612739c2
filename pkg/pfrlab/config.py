"""
Experiment configuration: profiles, TOML files and command-line overrides.

Precedence is profile defaults < config file < explicit overrides. Every config has a
stable digest (SHA-256 of its canonical JSON) recorded next to the data it produced.
"""

import dataclasses
import hashlib
import json
import logging
import tomllib
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError, DesignError
from .gst_design import max_lengths_for
from .noise_sim import DriftConfig, DriftKind, NoiseConfig, SpamConfig
from .pfr import FramePolicy

logger = logging.getLogger(__name__)

DEFAULT_OUTPUT_DIR = "pfrlab-out"


def default_noise():
    """0.02 rad over-rotation, 0.05 rad sinusoidal detuning drift, T1/T2 preset damping"""
    return NoiseConfig.from_coherence(
        overrotation_eps=0.02,
        drift=DriftConfig(kind=DriftKind.SINUSOID, amplitude=0.05, period=50_000),
    )


@dataclass(frozen=True)
class ExperimentConfig:
    l_max: int = 64
    shots_per_sequence: int = 250
    n_randomizations: int = 250
    interleave_block: int = 10
    repetitions: int = 7
    noise: NoiseConfig = field(default_factory=default_noise)
    spam: SpamConfig = field(default_factory=SpamConfig)
    master_seed: int = 0
    output_dir: str = DEFAULT_OUTPUT_DIR
    bootstrap_resamples: int = 100
    frame_policy: FramePolicy = FramePolicy.ABSORB
    workers: int = 1

    def __post_init__(self):
        try:
            object.__setattr__(self, "frame_policy", FramePolicy(self.frame_policy))
        except ValueError as e:
            raise ConfigError(str(e)) from None
        try:
            max_lengths_for(self.l_max)
        except DesignError as e:
            raise ConfigError(str(e)) from None
        for name in ("shots_per_sequence", "n_randomizations", "interleave_block", "repetitions"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if self.shots_per_sequence % self.interleave_block:
            raise ConfigError(
                f"shots_per_sequence ({self.shots_per_sequence}) must be a multiple of interleave_block ({self.interleave_block})"
            )
        if self.bootstrap_resamples and self.bootstrap_resamples < 100:
            raise ConfigError(f"bootstrap_resamples must be 0 or >= 100, got {self.bootstrap_resamples}")
        if self.workers < 0:
            raise ConfigError(f"workers must be >= 0, got {self.workers}")

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["frame_policy"] = self.frame_policy.value
        d["noise"] = json.loads(json.dumps(d["noise"], default=str))
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigError(f"unknown experiment settings: {', '.join(sorted(unknown))}")
        if isinstance(d.get("noise"), dict):
            d["noise"] = _noise_from_dict(d["noise"])
        if isinstance(d.get("spam"), dict):
            d["spam"] = _spam_from_dict(d["spam"])
        try:
            return cls(**d)
        except TypeError as e:
            raise ConfigError(str(e)) from None

    def digest(self):
        payload = json.dumps(self.to_dict(), sort_keys=True, default=str)
        return hashlib.sha256(payload.encode()).hexdigest()


PROFILES = {
    "quick": {
        "l_max": 64,
        "shots_per_sequence": 250,
        "n_randomizations": 250,
        "repetitions": 2,
        "bootstrap_resamples": 100,
    },
    "paper": {
        "l_max": 1024,
        "shots_per_sequence": 1000,
        "n_randomizations": 1000,
        "repetitions": 7,
        "bootstrap_resamples": 100,
    },
}


def _noise_from_dict(d):
    try:
        return NoiseConfig.from_dict(d)
    except TypeError as e:
        raise ConfigError(f"bad [noise] table: {e}") from None


def _spam_from_dict(d):
    try:
        return SpamConfig.from_dict(d)
    except TypeError as e:
        raise ConfigError(f"bad [spam] table: {e}") from None


def _merge_noise(base, table):
    if not table:
        return base
    current = dataclasses.asdict(base)
    drift = dict(current.pop("drift"))
    table = dict(table)
    drift.update(table.pop("drift", {}) or {})
    current.update(table)
    return _noise_from_dict({**current, "drift": drift})


def _merge_spam(base, table):
    if not table:
        return base
    return _spam_from_dict({**dataclasses.asdict(base), **table})


def profile_config(profile="quick"):
    try:
        settings = PROFILES[profile]
    except KeyError:
        raise ConfigError(f"unknown profile {profile!r} (choose from {', '.join(PROFILES)})") from None
    return ExperimentConfig(**settings)


def read_toml(path):
    try:
        with open(path, "rb") as f:
            return tomllib.load(f)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e.strerror}") from e
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"invalid TOML in {path}: {e}") from e


def apply_table(config, data):
    """Layer a parsed config document ([experiment], [noise], [noise.drift], [spam]) over ``config``"""
    unknown = set(data) - {"experiment", "noise", "spam"}
    if unknown:
        raise ConfigError(f"unknown config sections: {', '.join(sorted(unknown))}")
    experiment = dict(data.get("experiment", {}))
    for name in ("noise", "spam"):
        if name in experiment:
            raise ConfigError(f"'{name}' belongs in its own [{name}] section")
    noise = _merge_noise(config.noise, data.get("noise"))
    spam = _merge_spam(config.spam, data.get("spam"))
    merged = {**config.to_dict(), **experiment, "noise": noise, "spam": spam}
    return ExperimentConfig.from_dict(merged)


def load_config(path=None, profile="quick", **overrides):
    config = profile_config(profile)
    if path is not None:
        config = apply_table(config, read_toml(path))
        logger.debug("loaded config %s", Path(path))
    overrides = {k: v for k, v in overrides.items() if v is not None}
    if overrides:
        config = ExperimentConfig.from_dict({**config.to_dict(), "noise": config.noise, "spam": config.spam, **overrides})
    return config
