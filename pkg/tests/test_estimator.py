import dataclasses

import numpy as np
import pytest

from irsopt.core import DimensionError, SystemDims, dft_channel
from irsopt.estimator import (
    ChannelEstimate,
    PilotFormatError,
    estimate_channel,
    estimate_noise_variance,
    invert_hadamard_pilots,
    project_to_delay_subspace,
)
from irsopt.simulator import (
    PilotDataset,
    ScenarioConfig,
    build_hadamard_pilots,
    generate_scenario,
    simulate_pilot_phase,
)

from conftest import crandn


def rel_err(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


def truth_freq(scenario, user):
    m = scenario.models[user]
    return dft_channel(m.direct, scenario.dims), dft_channel(m.elements, scenario.dims)


def test_no_direct_path_single_block(small_dims):
    sc = generate_scenario(ScenarioConfig(small_dims, num_users=2, seed=3, direct_power_ratio=0.0))
    assert np.all(sc.models[0].direct == 0)
    ds = simulate_pilot_phase(sc, build_hadamard_pilots(small_dims, 1), noiseless=True)
    for u in range(2):
        est = invert_hadamard_pilots(ds, u)
        assert not est.aliasing_resolved
        _, g = truth_freq(sc, u)
        assert rel_err(est.element_freq, g) <= 1e-10


def test_aliased_slot_holds_direct_path(small_scenario, small_dims):
    ds = simulate_pilot_phase(small_scenario, build_hadamard_pilots(small_dims, 1), noiseless=True)
    est = invert_hadamard_pilots(ds, 1)
    d, g = truth_freq(small_scenario, 1)
    assert np.all(est.direct_freq == 0)
    assert rel_err(est.element_freq[0], g[0] + d) <= 1e-10
    assert rel_err(est.element_freq[1:], g[1:]) <= 1e-10


def test_paired_design_resolves_direct_path(small_scenario, small_dims):
    ds = simulate_pilot_phase(small_scenario, build_hadamard_pilots(small_dims, 4), noiseless=True)
    for u in range(small_scenario.num_users):
        est = invert_hadamard_pilots(ds, u)
        d, g = truth_freq(small_scenario, u)
        assert est.aliasing_resolved
        assert rel_err(est.direct_freq, d) <= 1e-10
        assert rel_err(est.element_freq, g) <= 1e-10


def test_zero_signal(small_dims):
    P = build_hadamard_pilots(small_dims, 4)
    ds = PilotDataset(small_dims, P, np.ones(small_dims.K, dtype=complex),
                      np.zeros((small_dims.K, P.shape[1], 1), dtype=complex))
    est = estimate_channel(ds)
    assert np.all(est.element_freq == 0) and np.all(est.direct_freq == 0)
    assert np.all(est.element_taps == 0)
    assert est.noise_variance_estimate == 0


def test_bad_pilots(small_dims):
    K, N = small_dims.K, small_dims.N
    rx = np.zeros((K, N, 1), dtype=complex)
    bad = np.ones((N, N), dtype=np.int8)
    with pytest.raises(PilotFormatError):
        invert_hadamard_pilots(PilotDataset(small_dims, bad, np.ones(K, dtype=complex), rx))


def test_zero_pilot_symbol(small_dims):
    P = build_hadamard_pilots(small_dims, 1)
    x = np.ones(small_dims.K, dtype=complex)
    x[3] = 0
    ds = PilotDataset(small_dims, P, x, np.zeros((small_dims.K, small_dims.N, 1), dtype=complex))
    with pytest.raises(ZeroDivisionError):
        invert_hadamard_pilots(ds)


class TestProjection:
    def test_noiseless_is_noop(self, small_scenario, small_dims):
        ds = simulate_pilot_phase(small_scenario, build_hadamard_pilots(small_dims, 4), noiseless=True)
        raw = invert_hadamard_pilots(ds, 0)
        proj = project_to_delay_subspace(raw)
        assert np.max(np.abs(proj.element_freq - raw.element_freq)) <= 1e-10 * np.max(np.abs(raw.element_freq))
        np.testing.assert_allclose(proj.element_taps, small_scenario.models[0].elements, atol=1e-20)

    def test_rows_consistent_with_taps(self, rng, small_dims):
        est = ChannelEstimate(small_dims, crandn(rng, 32), crandn(rng, 16, 32), True)
        proj = project_to_delay_subspace(est)
        assert np.max(np.abs(proj.element_freq - dft_channel(proj.element_taps, small_dims))) <= 1e-10
        assert np.max(np.abs(proj.direct_freq - dft_channel(proj.direct_taps, small_dims))) <= 1e-10

    def test_unit_impulse(self):
        dims = SystemDims(500, 20, 1)
        est = ChannelEstimate(dims, np.zeros(500, dtype=complex), np.ones((1, 500), dtype=complex), True)
        taps = project_to_delay_subspace(est).element_taps[0]
        expected = np.zeros(20)
        expected[0] = 1
        assert np.max(np.abs(taps - expected)) <= 1e-10

    def test_is_least_squares(self, rng):
        dims = SystemDims(40, 6, 2)
        y = crandn(rng, 2, 40)
        est = ChannelEstimate(dims, np.zeros(40, dtype=complex), y, True)
        taps = project_to_delay_subspace(est).element_taps
        F = np.exp(-2j * np.pi * np.outer(np.arange(40), np.arange(6)) / 40)
        for n in range(2):
            ls, *_ = np.linalg.lstsq(F, y[n], rcond=None)
            np.testing.assert_allclose(taps[n], ls, atol=1e-12)

    def test_denoising_factor(self):
        # 200 trials of a flat truth plus unit-variance white noise.
        dims = SystemDims(500, 20, 1)
        rng = np.random.default_rng(31)
        truth = np.ones(500, dtype=complex)
        pre, post = [], []
        for _ in range(200):
            noise = crandn(rng, 500)
            est = ChannelEstimate(dims, np.zeros(500, dtype=complex), (truth + noise)[None, :], True)
            proj = project_to_delay_subspace(est)
            pre.append(np.mean(np.abs(noise) ** 2))
            post.append(np.mean(np.abs(proj.element_freq[0] - truth) ** 2))
        ratio = np.mean(post) / np.mean(pre)
        assert abs(ratio / (20 / 500) - 1) <= 0.15

    def test_wrong_subcarrier_count(self, small_dims):
        est = ChannelEstimate(small_dims, np.zeros(31), np.zeros((16, 31)), True)
        with pytest.raises(DimensionError):
            project_to_delay_subspace(est)


class TestNoiseVariance:
    def test_noiseless(self, small_scenario, small_dims):
        ds = simulate_pilot_phase(small_scenario, build_hadamard_pilots(small_dims, 1), noiseless=True)
        assert estimate_channel(ds, 0).noise_variance_estimate <= 1e-18

    def test_k_equal_m(self):
        dims = SystemDims(8, 4, 2)
        raw = ChannelEstimate(dims, np.zeros(8), np.zeros((2, 8)), True)
        proj = project_to_delay_subspace(raw)
        object.__setattr__(proj.dims, "K", 4)
        with pytest.raises(DimensionError):
            estimate_noise_variance(raw, proj)

    @pytest.mark.parametrize("reps", [1, 4])
    def test_small_scale_accuracy(self, reps):
        dims = SystemDims(128, 8, 64)
        sc = generate_scenario(ScenarioConfig(dims, num_users=2, seed=4))
        ds = simulate_pilot_phase(sc, build_hadamard_pilots(dims, reps))
        for u in range(2):
            est = estimate_channel(ds, u)
            assert abs(est.noise_variance_estimate / sc.config.noise_variance - 1) <= 0.1

    @pytest.mark.slow
    def test_full_size_known_level(self, full_dims):
        # N0 * B = 1e-16 * 1e7 = 1e-9
        estimates = {}
        for psd in (1e-16, 2e-16):
            sc = generate_scenario(ScenarioConfig(full_dims, num_users=1, seed=2, noise_psd=psd))
            ds = simulate_pilot_phase(sc, build_hadamard_pilots(full_dims, 1))
            estimates[psd] = estimate_channel(ds, 0).noise_variance_estimate
        assert abs(estimates[1e-16] / 1e-9 - 1) <= 0.10
        assert abs(estimates[2e-16] / estimates[1e-16] / 2 - 1) <= 0.10


def test_linearity(small_dims):
    P = build_hadamard_pilots(small_dims, 4)
    a = simulate_pilot_phase(generate_scenario(ScenarioConfig(small_dims, num_users=1, seed=1)), P, noiseless=True)
    b = simulate_pilot_phase(generate_scenario(ScenarioConfig(small_dims, num_users=1, seed=2)), P, noiseless=True)
    s = PilotDataset(small_dims, P, a.transmit_signal, a.received + b.received)
    ea, eb, es = (estimate_channel(x) for x in (a, b, s))
    scale = np.max(np.abs(es.element_taps))
    assert np.max(np.abs(es.element_taps - ea.element_taps - eb.element_taps)) <= 1e-10 * scale
    assert np.max(np.abs(es.direct_taps - ea.direct_taps - eb.direct_taps)) <= 1e-10 * scale


def test_subcarrier_permutation(small_scenario, small_dims):
    ds = simulate_pilot_phase(small_scenario, build_hadamard_pilots(small_dims, 4))
    perm = np.random.default_rng(5).permutation(small_dims.K)
    shuffled = dataclasses.replace(ds, transmit_signal=ds.transmit_signal[perm], received=ds.received[perm])
    a = invert_hadamard_pilots(ds, 2)
    b = invert_hadamard_pilots(shuffled, 2)
    # equal up to rounding of vectorized kernels
    np.testing.assert_allclose(b.element_freq, a.element_freq[:, perm], rtol=1e-12, atol=0)
    np.testing.assert_allclose(b.direct_freq, a.direct_freq[perm], rtol=1e-12, atol=0)


def test_compose_respects_aliasing(small_dims):
    est = ChannelEstimate(small_dims, np.zeros(32), np.ones((16, 32)), False)
    theta = np.ones(16)
    est.compose(theta)
    theta[0] = -1
    with pytest.raises(ValueError):
        est.compose(theta)
