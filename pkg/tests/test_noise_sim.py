#!/usr/bin/env python

import logging
import math

import numpy as np
import pytest

from pfrlab.errors import ConfigError, DatasetError
from pfrlab.gst_design import standard_design
from pfrlab.noise_sim import (
    CLIFFORD_TIME,
    PRESET_T1,
    PRESET_T2,
    PULSE_TIME,
    Attachment,
    Dataset,
    DriftConfig,
    DriftKind,
    InterleaveSchedule,
    Mode,
    NoiseConfig,
    SpamConfig,
    _clamp,
    drift_trajectory,
    drift_value,
    gate_channel,
    gate_indices,
    sample_dataset,
    sample_datasets,
    sequence_probability,
    shot_probabilities,
    stochastic_ptm,
)
from pfrlab.pauli_algebra import is_cptp, pauli_twirl, rotation_ptm
from pfrlab.pfr import FramePolicy

IDLE_SEQUENCE = ("Gx",) + ("Gi",) * 10 + ("Gx",)


class TestConfigs:
    """
    Noise, drift and SPAM configuration validation
    """

    def test_defaults_are_ideal(self):
        """the default noise config is noiseless"""
        assert NoiseConfig().is_ideal

    def test_bad_rates(self):
        """rates outside [0, 1] are rejected"""
        with pytest.raises(ConfigError):
            NoiseConfig(depolarizing_rate=1.5)
        with pytest.raises(ConfigError):
            NoiseConfig(overrotation_eps=float("nan"))

    def test_bad_drift(self):
        """drift periods below one shot and unknown kinds are rejected"""
        with pytest.raises(ConfigError):
            DriftConfig(kind=DriftKind.SINUSOID, amplitude=0.1, period=0)
        with pytest.raises(ValueError):
            DriftConfig(kind="sawtooth")

    def test_from_coherence(self):
        """T1 = 10 us, T2 = 13 us over a 100 ns Clifford"""
        noise = NoiseConfig.from_coherence()
        assert noise.amp_damping_gamma == pytest.approx(1 - math.exp(-CLIFFORD_TIME / 10e-6))
        expected_q = 0.5 * (1 - math.exp(-CLIFFORD_TIME * (1 / 13e-6 - 1 / 20e-6)))
        assert noise.dephasing_rate == pytest.approx(expected_q)
        with pytest.raises(ConfigError):
            NoiseConfig.from_coherence(t1=1e-6, t2=3e-6)

    def test_dict_form(self):
        """NoiseConfig survives to_dict/from_dict and keeps its digest"""
        noise = NoiseConfig(overrotation_eps=0.02, drift=DriftConfig(kind="sinusoid", amplitude=0.05))
        again = NoiseConfig.from_dict(noise.to_dict())
        assert again == noise
        assert again.digest() == noise.digest()

    def test_bad_spam(self):
        """rho must be a state and effect a POVM element"""
        with pytest.raises(ConfigError):
            SpamConfig(rho=(1.0, 0.0, 0.0, 0.0))
        with pytest.raises(ConfigError):
            SpamConfig(effect=(1.0, 0.0, 0.0, 1.0))
        with pytest.raises(ConfigError):
            SpamConfig(prep_error=-0.1)


class TestProbabilities:
    """
    Outcome probabilities of noiseless and noisy sequences
    """

    def test_ideal_values(self):
        """|0> reads 0, one X_pi/2 reads 1/2, two read 1"""
        noise, spam = NoiseConfig(), SpamConfig()
        assert sequence_probability([], noise, spam) == pytest.approx(0.0, abs=1e-15)
        assert sequence_probability(["Gx"], noise, spam) == pytest.approx(0.5)
        assert sequence_probability(["Gx", "Gx"], noise, spam) == pytest.approx(1.0)
        assert sequence_probability(["Gy", "Gy", "Gi"], noise, spam) == pytest.approx(1.0)

    def test_spam_errors(self):
        """preparation and readout flips show up on the empty sequence"""
        assert sequence_probability([], NoiseConfig(), SpamConfig(prep_error=0.1)) == pytest.approx(0.1)
        assert sequence_probability([], NoiseConfig(), SpamConfig(meas_error=0.05)) == pytest.approx(0.05)

    def test_overrotation(self):
        """a coherent over-rotation lengthens the X_pi/2 pulse"""
        channel = gate_channel("Gx", NoiseConfig(overrotation_eps=0.05))
        np.testing.assert_allclose(channel, rotation_ptm((1.0, 0.0, 0.0), math.pi / 2 + 0.05), atol=1e-12)

    @pytest.mark.parametrize("attachment", list(Attachment))
    def test_gate_channels_are_cptp(self, attachment):
        """every noisy gate channel is physical"""
        noise = NoiseConfig.from_coherence(overrotation_eps=0.05, axis_tilt=0.3, depolarizing_rate=0.01, attachment=attachment)
        for label in ("Gi", "Gx", "Gy", "C7"):
            assert is_cptp(gate_channel(label, noise, drift_value=0.02))

    def test_pulse_attachment_ideal(self):
        """noiseless pulse-level simulation equals gate-level"""
        circuit = ["Gx", "Gy", "C13", "Gi", "Gx"]
        gate = sequence_probability(circuit, NoiseConfig(), SpamConfig())
        pulse = sequence_probability(circuit, NoiseConfig(attachment="pulse"), SpamConfig())
        assert pulse == pytest.approx(gate, abs=1e-12)

    def test_pulse_relaxation_uses_pulse_time(self):
        """pulse-level Gi relaxes z over two 50 ns pulses, one on the equator, close to a gate-level Gi"""
        gate = gate_channel("Gi", NoiseConfig.from_coherence())
        pulse = gate_channel("Gi", NoiseConfig.from_coherence(attachment="pulse"))
        assert gate[3, 3] == pytest.approx(math.exp(-CLIFFORD_TIME / PRESET_T1), rel=1e-12)
        assert pulse[3, 3] == pytest.approx(math.exp(-PULSE_TIME / PRESET_T1 - PULSE_TIME / PRESET_T2), rel=1e-9)
        assert abs(pulse[3, 3] - gate[3, 3]) < 2e-3

    def test_half_pulses_compose(self):
        """two pulse-time damping channels make one Clifford-time channel"""
        noise = NoiseConfig(amp_damping_gamma=0.02)
        half = stochastic_ptm(noise, PULSE_TIME / CLIFFORD_TIME)
        np.testing.assert_allclose(half @ half, stochastic_ptm(noise), atol=1e-14)

    @pytest.mark.parametrize("attachment", list(Attachment))
    def test_vectorized_matches_scalar(self, rng, attachment):
        """shot_probabilities agrees with sequence_probability for shared and per-shot circuits"""
        noise = NoiseConfig.from_coherence(overrotation_eps=0.03, axis_tilt=0.2, depolarizing_rate=0.005, attachment=attachment)
        spam = SpamConfig(prep_error=0.01, meas_error=0.02)
        drift = rng.uniform(-0.1, 0.1, size=6)
        circuit = rng.integers(0, 24, size=9)
        shared = shot_probabilities(circuit, drift, noise, spam)
        for value, p in zip(drift, shared, strict=True):
            assert p == pytest.approx(sequence_probability(circuit, noise, spam, value), abs=1e-12)

        per_shot = rng.integers(0, 24, size=(6, 9))
        probs = shot_probabilities(per_shot, drift, noise, spam)
        for row, value, p in zip(per_shot, drift, probs, strict=True):
            assert p == pytest.approx(sequence_probability(row, noise, spam, value), abs=1e-12)

    def test_gate_indices(self):
        """labels, tokens and design sequences resolve to Clifford indices"""
        design = standard_design(1)
        spec = design.sequences[30]
        assert len(gate_indices(spec)) == len(spec.flat)
        assert gate_indices(["Gi", "C3"]).tolist() == [0, 3]

    def test_clamp_logging(self, caplog):
        """large clamps warn, tiny ones are debug"""
        with caplog.at_level(logging.DEBUG, logger="pfrlab"):
            out = _clamp(np.array([1.0 + 1e-3, -1e-15, 0.5]), "test")
        np.testing.assert_array_equal(out, [1.0, 0.0, 0.5])
        assert any(r.levelno == logging.WARNING for r in caplog.records)


class TestDrift:
    """
    Slow detuning-phase drift
    """

    def test_none(self):
        """inactive drift is zero everywhere"""
        np.testing.assert_array_equal(drift_trajectory(100, DriftConfig()), np.zeros(100))

    def test_sinusoid(self):
        """sinusoidal drift matches the point evaluation"""
        drift = DriftConfig(kind=DriftKind.SINUSOID, amplitude=0.05, period=400)
        trajectory = drift_trajectory(1000, drift)
        assert trajectory[100] == pytest.approx(0.05)
        for i in (0, 17, 250, 999):
            assert drift_value(i, drift) == pytest.approx(trajectory[i])

    def test_quarter_period(self):
        """a quarter period in, the sinusoid sits at its amplitude"""
        drift = DriftConfig(kind=DriftKind.SINUSOID, amplitude=0.05, period=100)
        assert drift_value(25, drift) == pytest.approx(0.05)
        assert drift_value(75, drift) == pytest.approx(-0.05)

    def test_random_walk(self):
        """random walks start at 0 and are reproducible from their seed"""
        drift = DriftConfig(kind=DriftKind.RANDOM_WALK, amplitude=0.05, period=100, seed=3)
        a, b = drift_trajectory(500, drift), drift_trajectory(500, drift)
        np.testing.assert_array_equal(a, b)
        assert a[0] == 0.0
        assert drift_value(321, drift) == pytest.approx(a[321])
        with pytest.raises(ValueError):
            drift_value(-1, drift)


class TestSchedule:
    """
    Interleaving of randomized and plain shots on one clock
    """

    def test_blocks(self):
        """blocks of 10 randomized shots alternate with blocks of 10 plain shots"""
        schedule = InterleaveSchedule(block=10)
        rand = schedule.shot_indices(Mode.RANDOMIZED, 0, 3, 20)
        plain = schedule.shot_indices(Mode.PLAIN, 0, 3, 20)
        assert rand.tolist() == list(range(0, 10)) + list(range(60, 70))
        assert plain.tolist() == list(range(30, 40)) + list(range(90, 100))

    def test_partition(self):
        """every global shot index is used exactly once"""
        schedule = InterleaveSchedule(block=5)
        n_sequences, n_shots = 4, 15
        used = np.concatenate(
            [schedule.shot_indices(mode, position, n_sequences, n_shots) for mode in schedule.modes for position in range(n_sequences)]
        )
        assert sorted(used.tolist()) == list(range(schedule.total_shots(n_sequences, n_shots)))

    def test_bad_schedule(self):
        """zero-length blocks and repeated modes are rejected"""
        with pytest.raises(ConfigError):
            InterleaveSchedule(block=0)
        with pytest.raises(ConfigError):
            InterleaveSchedule(modes=(Mode.PLAIN, Mode.PLAIN))


class TestDataset:
    """
    Shot-count datasets
    """

    def test_validation(self):
        """k must lie in [0, n] and arrays must line up"""
        with pytest.raises(DatasetError):
            Dataset([0, 1], [10, 10], [3, 11])
        with pytest.raises(DatasetError):
            Dataset([0], [10, 10], [3, 1])
        with pytest.raises(DatasetError):
            Dataset([0], [0], [0])

    def test_subset_and_frequencies(self):
        """subsets keep rows in order"""
        data = Dataset([0, 1, 2], [10, 10, 20], [1, 5, 20], {"randomized": True})
        sub = data.subset([2, 0])
        assert sub.sequence_ids.tolist() == [0, 2]
        np.testing.assert_allclose(sub.frequencies, [0.1, 1.0])
        assert sub.randomized

    def test_csv(self, managed_temp_dir):
        """datasets and their metadata are written and read back"""
        data = Dataset([0, 4], [100, 100], [3, 97], {"mode": "plain", "seed": 5})
        path = data.to_csv(f"{managed_temp_dir}/dataset_plain.csv")
        again = Dataset.from_csv(path)
        assert again.k.tolist() == [3, 97]
        assert again.metadata == {"mode": "plain", "seed": 5}

    def test_exact_csv(self, managed_temp_dir):
        """expected-count datasets keep their float counts"""
        data = Dataset.from_probabilities([0, 1], [0.25, 1 / 3], 1000)
        again = Dataset.from_csv(data.to_csv(f"{managed_temp_dir}/exact.csv"))
        np.testing.assert_array_equal(again.k, data.k)

    def test_bad_csv(self, managed_temp_dir):
        """missing files raise DatasetError"""
        with pytest.raises(DatasetError):
            Dataset.from_csv(f"{managed_temp_dir}/nothing.csv")


class TestSampling:
    """
    Interleaved sampling of both arms
    """

    def test_shot_conservation(self):
        """every scheduled shot ends up in exactly one dataset row"""
        design = standard_design(2)
        noise = NoiseConfig(overrotation_eps=0.02, drift=DriftConfig(kind="sinusoid", amplitude=0.05, period=1000))
        schedule = InterleaveSchedule(block=10)
        datasets = sample_datasets(design.sequences, 40, noise, SpamConfig(), seed=11, schedule=schedule)
        assert set(datasets) == {Mode.RANDOMIZED, Mode.PLAIN}
        total = sum(d.total_shots for d in datasets.values())
        assert total == schedule.total_shots(len(design), 40)
        assert datasets[Mode.RANDOMIZED].randomized and not datasets[Mode.PLAIN].randomized

    def test_deterministic(self):
        """same seed, same counts; one mode alone reproduces its counts"""
        design = standard_design(2)
        noise = NoiseConfig(overrotation_eps=0.05)
        both = sample_datasets(design.sequences, 50, noise, SpamConfig(), seed=3)
        again = sample_datasets(design.sequences, 50, noise, SpamConfig(), seed=3)
        alone = sample_dataset(design.sequences, 50, noise, SpamConfig(), seed=3, mode=Mode.RANDOMIZED)
        np.testing.assert_array_equal(both[Mode.PLAIN].k, again[Mode.PLAIN].k)
        np.testing.assert_array_equal(both[Mode.RANDOMIZED].k, alone.k)

    def test_schedule_is_irrelevant_without_drift(self):
        """with no drift the interleave block and mode order do not change any count"""
        design = standard_design(2)
        noise = NoiseConfig.from_coherence(overrotation_eps=0.04, depolarizing_rate=0.01)
        spam = SpamConfig(meas_error=0.02)
        reference = sample_datasets(design.sequences, 60, noise, spam, seed=8, schedule=InterleaveSchedule(block=10))
        for schedule in (
            InterleaveSchedule(block=1),
            InterleaveSchedule(block=7),
            InterleaveSchedule(block=60, modes=(Mode.PLAIN, Mode.RANDOMIZED)),
        ):
            again = sample_datasets(design.sequences, 60, noise, spam, seed=8, schedule=schedule)
            for mode in (Mode.RANDOMIZED, Mode.PLAIN):
                np.testing.assert_array_equal(again[mode].k, reference[mode].k)

    def test_schedule_matters_with_drift(self):
        """the same seeds under drift see the schedule through the drift clock"""
        design = standard_design(2)
        noise = NoiseConfig(drift=DriftConfig(kind="sinusoid", amplitude=0.8, period=500))
        short = sample_datasets(design.sequences, 60, noise, SpamConfig(), seed=8, schedule=InterleaveSchedule(block=1))
        long = sample_datasets(design.sequences, 60, noise, SpamConfig(), seed=8, schedule=InterleaveSchedule(block=60))
        assert not np.array_equal(short[Mode.PLAIN].k, long[Mode.PLAIN].k)

    def test_noiseless_plain(self):
        """without noise the deterministic sequences never err"""
        data = sample_dataset([("Gx", "Gx"), ()], 100, NoiseConfig(), SpamConfig(), seed=1)
        assert data.k.tolist() == [100, 0]

    @pytest.mark.parametrize("policy", list(FramePolicy))
    def test_randomized_twirls_coherent_error(self, policy):
        """a coherent Z error on an idle sequence averages to its twirl under frame randomization"""
        noise = NoiseConfig(overrotation_eps=0.1, axis_tilt=math.pi / 2)
        spam = SpamConfig()
        n = 4000
        data = sample_dataset([IDLE_SEQUENCE], n, noise, spam, seed=5, mode=Mode.RANDOMIZED, n_randomizations=n, policy=policy)

        error = gate_channel("Gi", noise)
        twirled = pauli_twirl(error)
        gates = [gate_channel(label, NoiseConfig()) for label in IDLE_SEQUENCE]
        state = spam.rho_vector
        last = len(gates) - 1
        for i, ideal in enumerate(gates):
            # with outcome flips the final error is twirled too
            outer = error if (i == last and policy is FramePolicy.ABSORB) else twirled
            state = outer @ ideal @ state
        expected = float(spam.effect_vector @ state)
        plain = sequence_probability(IDLE_SEQUENCE, noise, spam)

        sigma = math.sqrt(expected * (1 - expected) / n)
        assert abs(data.frequencies[0] - expected) < 4 * sigma + 1e-3
        assert abs(plain - expected) > 0.1
