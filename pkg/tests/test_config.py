#!/usr/bin/env python

import pytest

from pfrlab.config import PROFILES, ExperimentConfig, apply_table, default_noise, load_config, profile_config
from pfrlab.errors import ConfigError
from pfrlab.noise_sim import DriftKind
from pfrlab.pfr import FramePolicy

LAYERED = """
[experiment]
l_max = 8
shots_per_sequence = 100
repetitions = 3
frame_policy = "flip"

[noise]
overrotation_eps = 0.05

[noise.drift]
amplitude = 0.1

[spam]
meas_error = 0.01
"""


def write(directory, text, name="pfrlab.toml"):
    path = f"{directory}/{name}"
    with open(path, "w") as f:
        f.write(text)
    return path


class TestProfiles:
    """
    Built-in profiles
    """

    def test_quick(self):
        """quick keeps L_max = 64 and two repetitions"""
        config = profile_config("quick")
        assert config.l_max == 64
        assert config.repetitions == 2
        assert config.bootstrap_resamples == 100

    def test_full_scale(self):
        """full scale runs 1000 shots per sequence up to L_max = 1024"""
        config = profile_config("paper")
        assert (config.l_max, config.shots_per_sequence, config.n_randomizations, config.repetitions) == (1024, 1000, 1000, 7)

    def test_unknown(self):
        """unknown profiles are configuration errors"""
        with pytest.raises(ConfigError):
            profile_config("huge")

    def test_default_noise(self):
        """coherent over-rotation plus slow sinusoidal drift on top of T1/T2 damping"""
        noise = default_noise()
        assert noise.overrotation_eps == 0.02
        assert noise.drift.kind is DriftKind.SINUSOID
        assert noise.drift.amplitude == 0.05
        assert noise.amp_damping_gamma > 0
        assert set(PROFILES) == {"quick", "paper"}


class TestValidation:
    """
    ExperimentConfig checks
    """

    @pytest.mark.parametrize(
        "changes",
        [
            {"l_max": 48},
            {"shots_per_sequence": 255},
            {"n_randomizations": 0},
            {"repetitions": -1},
            {"bootstrap_resamples": 50},
            {"workers": -2},
            {"frame_policy": "bogus"},
        ],
    )
    def test_rejected(self, changes):
        """invalid settings raise ConfigError"""
        with pytest.raises(ConfigError):
            ExperimentConfig(**changes)

    def test_disabled_bootstrap(self):
        """0 resamples turns the bootstrap off"""
        assert ExperimentConfig(bootstrap_resamples=0).bootstrap_resamples == 0

    def test_policy_by_name(self):
        """frame policies may be given as strings"""
        assert ExperimentConfig(frame_policy="flip").frame_policy is FramePolicy.FLIP

    def test_unknown_keys(self):
        """from_dict refuses settings it does not know"""
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({"lmax": 8})

    def test_dict_form(self):
        """to_dict/from_dict keeps the config and its digest"""
        config = ExperimentConfig(l_max=8, master_seed=4)
        again = ExperimentConfig.from_dict(config.to_dict())
        assert again == config
        assert again.digest() == config.digest()

    def test_digest_tracks_changes(self):
        """any change in settings changes the digest"""
        config = ExperimentConfig()
        assert config.digest() == ExperimentConfig().digest()
        assert config.replace(master_seed=1).digest() != config.digest()


class TestLoading:
    """
    Profile < file < overrides layering
    """

    def test_layering(self, managed_temp_dir):
        """file values replace profile defaults, nested tables merge"""
        config = load_config(write(managed_temp_dir, LAYERED), "quick")
        assert config.l_max == 8
        assert config.shots_per_sequence == 100
        assert config.repetitions == 3
        assert config.n_randomizations == 250
        assert config.frame_policy is FramePolicy.FLIP
        assert config.noise.overrotation_eps == 0.05
        assert config.noise.drift.amplitude == 0.1
        assert config.noise.drift.kind is DriftKind.SINUSOID
        assert config.noise.amp_damping_gamma == default_noise().amp_damping_gamma
        assert config.spam.meas_error == 0.01

    def test_overrides_win(self, managed_temp_dir):
        """explicit overrides beat the file; None means not given"""
        path = write(managed_temp_dir, LAYERED)
        config = load_config(path, "quick", master_seed=9, output_dir=None)
        assert config.master_seed == 9
        assert config.output_dir == "pfrlab-out"
        assert config.l_max == 8

    def test_no_file(self):
        """without a file the profile is used as is"""
        assert load_config(profile="paper") == profile_config("paper")

    @pytest.mark.parametrize(
        "text",
        [
            "[experiment]\nl_max = 3\n",
            "[experiment]\nnoise = 1\n",
            "[hardware]\nqubits = 2\n",
            "[noise]\ncolour = 'blue'\n",
            "[spam]\nprep_error = 2.0\n",
            "[experiment\n",
        ],
    )
    def test_bad_files(self, managed_temp_dir, text):
        """bad values, misplaced tables and broken TOML are configuration errors"""
        with pytest.raises(ConfigError):
            load_config(write(managed_temp_dir, text))

    def test_missing_file(self, managed_temp_dir):
        """unreadable files are configuration errors"""
        with pytest.raises(ConfigError):
            load_config(f"{managed_temp_dir}/missing.toml")

    def test_apply_table(self):
        """parsed documents layer directly"""
        config = apply_table(ExperimentConfig(), {"experiment": {"workers": 0}})
        assert config.workers == 0
