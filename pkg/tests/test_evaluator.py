import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from irsopt.cli import run_stages
from irsopt.core import AffineChannelModel, DimensionError, SystemDims
from irsopt.estimator import ChannelEstimate
from irsopt.evaluator import (
    UserRate,
    compare_report,
    dominant_subcarrier_gain,
    random_configuration,
    true_rate,
    weighted_average_rate,
)
from irsopt.optimizer import OptimizationSettings, objective_rate
from irsopt.simulator import GroundTruthScenario, ScenarioConfig, generate_scenario

from conftest import crandn


def hand_scenario(dims, models, los=None, **cfg):
    config = ScenarioConfig(dims, num_users=len(models), **cfg)
    los = np.zeros(len(models), dtype=bool) if los is None else np.asarray(los)
    return GroundTruthScenario(config, tuple(models), los)


class TestTrueRate:
    def test_zero_model(self):
        dims = SystemDims(16, 4, 4)
        sc = hand_scenario(dims, [AffineChannelModel(np.zeros(4), np.zeros((4, 4)))], noise_psd=1e-18)
        assert true_rate(sc, 0, np.ones(4)) == 0

    def test_flat_unit_channel(self):
        # P |h|^2 / (B N0) = 3 / (1e7 * 1e-7) = 3, log2(4) = 2 on each of K bins
        dims = SystemDims(500, 20, 4)
        direct = np.zeros(20)
        direct[0] = 1
        sc = hand_scenario(dims, [AffineChannelModel(direct, np.zeros((4, 20)))],
                           power=3.0, noise_psd=1e-7, bandwidth=1e7)
        expected = 1e7 / 519 * 500 * 2
        assert true_rate(sc, 0, np.ones(4)) == pytest.approx(expected, rel=1e-12)

    def test_matches_objective_under_exact_estimate(self, small_scenario):
        cfg = small_scenario.config
        s = OptimizationSettings(snr_scale=cfg.power / cfg.noise_variance, bandwidth=cfg.bandwidth)
        rng = np.random.default_rng(3)
        for u, m in enumerate(small_scenario.models):
            est = ChannelEstimate.from_taps(small_scenario.dims, m.direct, m.elements)
            theta = np.where(rng.uniform(size=16) < 0.5, -1, 1)
            pred = objective_rate(est, theta, s)
            assert abs(true_rate(small_scenario, u, theta) - pred) <= 1e-9 * pred

    def test_dimension_mismatch(self, small_scenario):
        with pytest.raises(DimensionError):
            true_rate(small_scenario, 0, np.ones(15))
        with pytest.raises(IndexError):
            true_rate(small_scenario, 9, np.ones(16))

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_global_sign_symmetry(self, seed):
        rng = np.random.default_rng(seed)
        dims = SystemDims(16, 4, 8)
        d, g = crandn(rng, 4), crandn(rng, 8, 4)
        theta = np.where(rng.uniform(size=8) < 0.5, -1, 1)
        a = hand_scenario(dims, [AffineChannelModel(d, g)], noise_psd=0.1)
        b = hand_scenario(dims, [AffineChannelModel(d, -g)], noise_psd=0.1)
        assert true_rate(a, 0, theta) == pytest.approx(true_rate(b, 0, -theta), rel=1e-12)

    def test_doubling_noise_lowers_rate(self, small_scenario):
        theta = np.ones(16)
        psd = small_scenario.config.noise_psd
        for u in range(small_scenario.num_users):
            r1 = true_rate(small_scenario, u, theta)
            r2 = true_rate(small_scenario, u, theta, noise_psd=2 * psd)
            assert r1 > 0 and r2 < r1


class TestWeightedAverage:
    def test_single(self):
        assert weighted_average_rate([(7.5, True)]) == 7.5

    def test_los_nlos(self):
        assert weighted_average_rate([(1.0, True), (2.0, False)]) == pytest.approx(5 / 3)

    def test_equal_rates(self):
        assert weighted_average_rate([(4.0, True), (4.0, False), (4.0, False)]) == pytest.approx(4.0)

    def test_empty(self):
        with pytest.raises(ValueError):
            weighted_average_rate([])

    def test_user_rate_entries(self):
        entries = [UserRate(0, 1.0, None, True), UserRate(1, 2.0, None, False)]
        assert weighted_average_rate(entries) == pytest.approx(5 / 3)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.tuples(st.floats(0, 1e9), st.booleans()), min_size=1, max_size=30),
           st.randoms(use_true_random=False))
    def test_permutation_invariant(self, entries, random):
        shuffled = list(entries)
        random.shuffle(shuffled)
        a, b = weighted_average_rate(entries), weighted_average_rate(shuffled)
        assert a == pytest.approx(b, rel=1e-12, abs=1e-6)


class TestReport:
    def test_missing_user(self, small_scenario):
        with pytest.raises(KeyError):
            compare_report(small_scenario, {0: np.ones(16)})

    def test_oracle_small_only(self, small_scenario):
        report = compare_report(small_scenario, [np.ones(16)] * 4)
        assert set(report.baselines) == {"random", "all-ones", "oracle"}
        assert report.baselines["all-ones"] == pytest.approx(report.weighted_average)
        assert report.baselines["oracle"] >= report.weighted_average
        big = generate_scenario(ScenarioConfig(SystemDims(32, 4, 32), num_users=1, seed=0))
        assert "oracle" not in compare_report(big, [np.ones(32)]).baselines

    def test_unknown_baseline(self, small_scenario):
        with pytest.raises(ValueError):
            compare_report(small_scenario, [np.ones(16)] * 4, baselines=("median",))

    @pytest.mark.parametrize("reps", [1, 4])
    def test_noiseless_prediction_exact(self, reps):
        cfg = ScenarioConfig(SystemDims(64, 8, 32), num_users=3, seed=12)
        scenario, _, _, results, _ = run_stages(cfg, repetitions=reps, noiseless=True)
        report = compare_report(scenario, results, baselines=())
        for u in report.per_user:
            assert abs(u.predicted_rate - u.true_rate) <= 1e-9 * u.true_rate
        assert report.prediction_gap["max_relative"] <= 1e-9

    def test_optimized_beats_baselines_small(self):
        cfg = ScenarioConfig(SystemDims(64, 8, 64), num_users=6, seed=5)
        scenario, _, _, results, _ = run_stages(cfg)
        report = compare_report(scenario, results, baselines=("random", "all-ones"), baseline_seed=5)
        assert report.weighted_average > report.baselines["random"]
        assert report.weighted_average > report.baselines["all-ones"]

    def test_serialization(self, small_scenario):
        report = compare_report(small_scenario, [np.ones(16)] * 4, baselines=("all-ones",))
        data = report.to_dict()
        assert "weighted mean" in data["note"]
        assert len(data["per_user"]) == 4
        assert "Mbit/s" in report.to_table()
        assert report.to_json().startswith("{")


def test_dominant_gain_of_aligned_configuration():
    # single subcarrier-flat model: aligned signs give (sum |g|)^2 / sum |g|^2
    dims = SystemDims(16, 4, 4)
    g = np.zeros((4, 4), dtype=complex)
    g[:, 0] = [1, -2, 1j, 0.5]
    sc = hand_scenario(dims, [AffineChannelModel(np.zeros(4), g)], noise_psd=1.0)
    gain = dominant_subcarrier_gain(sc, 0, [1, -1, 1, 1])
    assert gain == pytest.approx(abs(1 + 2 + 1j + 0.5) ** 2 / (1 + 4 + 1 + 0.25))


def test_random_configuration_reproducible():
    a = random_configuration(64, 3, 1)
    assert np.array_equal(a, random_configuration(64, 3, 1))
    assert not np.array_equal(a, random_configuration(64, 3, 2))
    assert set(np.unique(a)) <= {-1, 1}
