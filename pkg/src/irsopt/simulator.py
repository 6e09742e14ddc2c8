"""Synthetic IRS scenarios with known ground truth and the pilot phase.

The channel generator is a geometric cluster model:

* The base station sees the IRS through a single line-of-sight plane wave.
* Each user sees the IRS through ``cluster_count`` scattering clusters of
  ``rays_per_cluster`` plane waves, plus (with probability
  ``los_probability``) a line-of-sight plane wave carrying
  ``los_k_factor`` times the scattered power.
* The blocked direct path to every user is non-line-of-sight only.
* Path delays are fractional; each path contributes
  ``gain * sinc(l - tau * B)`` to tap ``l``.
"""

from __future__ import annotations

import dataclasses
import functools
from dataclasses import dataclass, field

import numpy as np

from .core import (
    AffineChannelModel,
    DimensionError,
    SystemDims,
    compose_channel,
    dft_channel,
    fwht,
    hadamard,
)

SPEED_OF_LIGHT = 299_792_458.0

# Tags separating the independent PRNG streams derived from one seed.
_STREAM_SCENARIO = 0
_STREAM_CALIBRATION = 1
_STREAM_NOISE = 2


@dataclass(frozen=True)
class ScenarioConfig:
    dims: SystemDims
    carrier_frequency: float = 4e9
    bandwidth: float = 1e7
    # None: calibrated at generation so the median random-configuration
    # per-subcarrier SNR is 0 dB.
    noise_psd: float | None = None
    power: float = 1.0
    num_users: int = 50
    los_probability: float = 0.5
    cluster_count: int = 3
    rays_per_cluster: int = 8
    angular_spread_deg: float = 5.0
    los_k_factor: float = 10.0
    element_gain: float = 1e-6
    direct_power_ratio: float = 0.1
    # Relative amplitude error of the -1 state (0: exact +-1 reflection).
    state_imbalance: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.bandwidth > 0:
            raise ValueError(f"bandwidth must be positive, got {self.bandwidth}")
        if self.noise_psd is not None and not self.noise_psd > 0:
            raise ValueError(f"noise_psd must be positive, got {self.noise_psd}")
        if not self.power > 0:
            raise ValueError(f"power must be positive, got {self.power}")
        if self.num_users < 1:
            raise ValueError(f"num_users must be >= 1, got {self.num_users}")
        if not 0.0 <= self.los_probability <= 1.0:
            raise ValueError(f"los_probability must lie in [0, 1], got {self.los_probability}")
        if self.cluster_count < 1 or self.rays_per_cluster < 1:
            raise ValueError("cluster_count and rays_per_cluster must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {self.seed}")

    @property
    def noise_variance(self) -> float:
        """Per-bin noise variance ``N0 * B``."""
        if self.noise_psd is None:
            raise ValueError("noise_psd has not been calibrated yet")
        return self.noise_psd * self.bandwidth

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["dims"] = list(self.dims.as_tuple())
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        data = dict(data)
        dims = data.pop("dims")
        if not isinstance(dims, SystemDims):
            dims = SystemDims(*dims)
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValueError(f"unknown scenario keys: {sorted(unknown)}")
        return cls(dims=dims, **data)


@dataclass(frozen=True)
class GroundTruthScenario:
    config: ScenarioConfig
    models: tuple[AffineChannelModel, ...]
    los_flags: np.ndarray = field(repr=False)

    @property
    def dims(self) -> SystemDims:
        return self.config.dims

    @property
    def num_users(self) -> int:
        return len(self.models)

    def frequency_model(self, user: int) -> tuple[np.ndarray, np.ndarray]:
        """True ``(direct_freq (K,), element_freq (N, K))`` for one user."""
        model = self.models[user]
        return dft_channel(model.direct, self.dims), dft_channel(model.elements, self.dims)


@dataclass
class PilotDataset:
    """Pilot configurations (N x T), constant pilot symbol (K,), received (K, T, U)."""

    dims: SystemDims
    pilot_matrix: np.ndarray
    transmit_signal: np.ndarray
    received: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        K, _, N = self.dims.as_tuple()
        self.pilot_matrix = np.asarray(self.pilot_matrix, dtype=np.int8)
        self.transmit_signal = np.asarray(self.transmit_signal, dtype=np.complex128)
        self.received = np.asarray(self.received, dtype=np.complex128)
        if self.pilot_matrix.ndim != 2 or self.pilot_matrix.shape[0] != N:
            raise DimensionError(f"pilot matrix shape {self.pilot_matrix.shape} needs {N} rows")
        T = self.pilot_matrix.shape[1]
        if self.transmit_signal.shape != (K,):
            raise DimensionError(f"transmit signal shape {self.transmit_signal.shape}, expected ({K},)")
        if self.received.ndim != 3 or self.received.shape[:2] != (K, T):
            raise DimensionError(f"received shape {self.received.shape}, expected ({K}, {T}, U)")
        if not np.all(np.abs(self.pilot_matrix) == 1):
            raise ValueError("pilot matrix entries must be +1 or -1")

    @property
    def num_users(self) -> int:
        return self.received.shape[2]


def pilot_block_layout(repetitions: int) -> list[tuple[int, int]]:
    """``(row_shift, sign)`` of each N-column block of the pilot design."""
    if repetitions < 1:
        raise ValueError(f"repetitions must be >= 1, got {repetitions}")
    return [(b // 2, 1 if b % 2 == 0 else -1) for b in range(repetitions)]


def build_hadamard_pilots(dims: SystemDims, repetitions: int = 1) -> np.ndarray:
    """Pilot configurations as columns, N x (repetitions * N), int8.

    Block 0 is ``H_N``; block ``b`` is ``H_N`` with rows cyclically shifted
    down by ``b // 2`` and negated for odd ``b``. For four repetitions this
    gives ``H, -H, S H, -S H``: every column has its negation N columns later.
    The returned array is read-only and shared between calls.
    """
    return _pilots_cached(dims.N, repetitions)


@functools.lru_cache(maxsize=4)
def _pilots_cached(N: int, repetitions: int) -> np.ndarray:
    H = hadamard(N)
    blocks = [sign * np.roll(H, shift, axis=0) for shift, sign in pilot_block_layout(repetitions)]
    out = np.ascontiguousarray(np.concatenate(blocks, axis=1), dtype=np.int8)
    out.setflags(write=False)
    return out


def hadamard_repetitions(pilots: np.ndarray, dims: SystemDims) -> int | None:
    """Number of blocks if ``pilots`` follows :func:`build_hadamard_pilots`, else None."""
    pilots = np.asarray(pilots)
    if pilots.ndim != 2 or pilots.shape[0] != dims.N or pilots.shape[1] % dims.N:
        return None
    reps = pilots.shape[1] // dims.N
    if reps == 0 or not np.array_equal(pilots, build_hadamard_pilots(dims, reps)):
        return None
    return reps


def element_grid(N: int, carrier_frequency: float) -> np.ndarray:
    """(N, 2) element coordinates in metres on a half-wavelength planar grid.

    ``N = 2^k`` is laid out as ``2^ceil(k/2)`` rows by ``2^floor(k/2)``
    columns, so 4096 elements form a 64 x 64 array.
    """
    k = N.bit_length() - 1
    rows = 2 ** ((k + 1) // 2)
    cols = N // rows
    spacing = SPEED_OF_LIGHT / carrier_frequency / 2
    r, c = np.divmod(np.arange(N), cols)
    return np.stack((c * spacing, r * spacing), axis=1)


def _plane_wave(positions, polar, azimuth, wavenumber) -> np.ndarray:
    """Array response ``exp(-j k p . u)`` for directions of shape (P,) -> (N, P)."""
    ux = np.sin(polar) * np.cos(azimuth)
    uy = np.sin(polar) * np.sin(azimuth)
    phase = positions[:, :1] * ux[None, :] + positions[:, 1:] * uy[None, :]
    return np.exp(-1j * wavenumber * phase)


def _sinc_taps(delays, M: int, bandwidth: float) -> np.ndarray:
    """(P, M) tap weights ``sinc(l - tau * B)``."""
    return np.sinc(np.arange(M)[None, :] - np.asarray(delays)[:, None] * bandwidth)


def _cn(rng, shape, variance=1.0) -> np.ndarray:
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * np.sqrt(variance / 2)


def _cluster_powers(rng, delays, delay_spread) -> np.ndarray:
    # Exponential power-delay profile with log-normal shadowing per cluster.
    decay = np.exp(-np.asarray(delays) / delay_spread) if delay_spread > 0 else np.ones(len(delays))
    p = decay * 10 ** (rng.normal(0.0, 3.0, len(delays)) / 10)
    return p / p.sum()


def generate_scenario(config: ScenarioConfig) -> GroundTruthScenario:
    """Draw a ground-truth scenario; bit-identical for identical configs."""
    dims = config.dims
    K, M, N = dims.as_tuple()
    B = config.bandwidth
    rng = np.random.default_rng([config.seed, _STREAM_SCENARIO])
    positions = element_grid(N, config.carrier_frequency)
    wavenumber = 2 * np.pi * config.carrier_frequency / SPEED_OF_LIGHT
    # Paths stay inside the first M - 4 taps so sinc tails fit; small M
    # degenerates to zero-delay paths.
    window = max(M - 4, 0) / B
    delay_spread = window / 4

    bs_polar = rng.uniform(0.0, np.pi / 3)
    bs_azimuth = rng.uniform(0.0, 2 * np.pi)
    bs_response = _plane_wave(positions, np.array([bs_polar]), np.array([bs_azimuth]), wavenumber)[:, 0]

    C, R = config.cluster_count, config.rays_per_cluster
    spread = np.deg2rad(config.angular_spread_deg)
    models = []
    los_flags = np.zeros(config.num_users, dtype=bool)
    for u in range(config.num_users):
        los = rng.uniform() < config.los_probability
        los_flags[u] = los
        base = rng.uniform(0.0, window / 2)

        excess = rng.uniform(0.0, window / 2, C)
        powers = _cluster_powers(rng, excess, delay_spread)
        centre_polar = rng.uniform(0.0, np.pi / 2, C)
        centre_azimuth = rng.uniform(0.0, 2 * np.pi, C)
        polar = np.clip(centre_polar[:, None] + spread * rng.standard_normal((C, R)), 0.0, np.pi / 2)
        azimuth = centre_azimuth[:, None] + spread * rng.standard_normal((C, R))
        gains = _cn(rng, (C, R)) * np.sqrt(powers[:, None] / R)
        delays = np.repeat(base + excess, R)
        path_gains = gains.ravel()
        path_polar = polar.ravel()
        path_azimuth = azimuth.ravel()
        if los:
            los_polar = rng.uniform(0.0, np.pi / 2)
            los_azimuth = rng.uniform(0.0, 2 * np.pi)
            los_gain = np.sqrt(config.los_k_factor) * np.exp(2j * np.pi * rng.uniform())
            delays = np.append(delays, base)
            path_gains = np.append(path_gains, los_gain)
            path_polar = np.append(path_polar, los_polar)
            path_azimuth = np.append(path_azimuth, los_azimuth)

        response = _plane_wave(positions, path_polar, path_azimuth, wavenumber) * path_gains[None, :]
        elements = config.element_gain * bs_response[:, None] * (response @ _sinc_taps(delays, M, B))

        direct_delays = rng.uniform(0.0, window, C)
        direct_powers = _cluster_powers(rng, direct_delays, delay_spread)
        direct_power = config.direct_power_ratio * N * config.element_gain**2
        direct_gains = _cn(rng, C) * np.sqrt(direct_powers * direct_power)
        direct = direct_gains @ _sinc_taps(direct_delays, M, B)

        if config.state_imbalance:
            # State -1 reflects -(1 + eps) g: affine in theta with shifted terms.
            eps = config.state_imbalance
            direct = direct - 0.5 * eps * elements.sum(axis=0)
            elements = elements * (1 + 0.5 * eps)
        models.append(AffineChannelModel(direct, elements))

    config_out = config
    if config.noise_psd is None:
        config_out = dataclasses.replace(config, noise_psd=_calibrate_noise_psd(config, models))
    return GroundTruthScenario(config_out, tuple(models), los_flags)


def _calibrate_noise_psd(config: ScenarioConfig, models) -> float:
    rng = np.random.default_rng([config.seed, _STREAM_CALIBRATION])
    gains = []
    for model in models:
        theta = np.where(rng.uniform(size=model.num_elements) < 0.5, -1, 1)
        gains.append(np.abs(dft_channel(compose_channel(model, theta), config.dims)) ** 2)
    median = float(np.median(np.concatenate(gains)))
    if median <= 0:
        raise ValueError("cannot calibrate noise level for an all-zero channel")
    return config.power * median / config.bandwidth


def pilot_symbol(dims: SystemDims, power: float = 1.0) -> np.ndarray:
    """Constant pilot with average time-domain sample power ``power`` (|x[nu]|^2 = P)."""
    return np.full(dims.K, np.sqrt(power), dtype=np.complex128)


def noise_rng(seed: int, user: int) -> np.random.Generator:
    """Independent noise stream for one user of a scenario."""
    return np.random.default_rng([seed, _STREAM_NOISE, user])


def simulate_user(
    scenario: GroundTruthScenario,
    user: int,
    pilots: np.ndarray,
    xbar: np.ndarray,
    noiseless: bool = False,
) -> np.ndarray:
    """Received blocks (K, T) of one user, ``hbar_theta * xbar + noise`` per column."""
    dims = scenario.dims
    pilots = np.asarray(pilots)
    if pilots.ndim != 2 or pilots.shape[0] != dims.N:
        raise DimensionError(f"pilot matrix shape {pilots.shape} needs {dims.N} rows")
    direct_f, element_f = scenario.frequency_model(user)
    reps = hadamard_repetitions(pilots, dims)
    if reps is not None:
        gt = element_f.T  # (K, N)
        blocks = []
        for shift, sgn in pilot_block_layout(reps):
            blocks.append(sgn * fwht(np.roll(gt, -shift, axis=1), axis=1))
        hbar = np.concatenate(blocks, axis=1)
    else:
        hbar = element_f.T @ pilots.astype(np.float64)
    hbar += direct_f[:, None]
    received = hbar * xbar[:, None]
    if not noiseless:
        rng = noise_rng(scenario.config.seed, user)
        received += _cn(rng, received.shape, scenario.config.noise_variance)
    return received


def simulate_pilot_phase(
    scenario: GroundTruthScenario,
    pilots: np.ndarray,
    power: float | None = None,
    noiseless: bool = False,
    users=None,
) -> PilotDataset:
    """Apply every pilot configuration to every (selected) user.

    ``power`` defaults to the scenario's configured transmit power. Noise is
    circularly-symmetric complex Gaussian with per-bin variance ``N0 * B``.
    """
    dims = scenario.dims
    power = scenario.config.power if power is None else power
    xbar = pilot_symbol(dims, power)
    users = range(scenario.num_users) if users is None else list(users)
    pilots = np.asarray(pilots, dtype=np.int8)
    received = np.empty((dims.K, pilots.shape[1], len(users)), dtype=np.complex128, order="F")
    for i, u in enumerate(users):
        received[:, :, i] = simulate_user(scenario, u, pilots, xbar, noiseless)
    return PilotDataset(dims, pilots, xbar, received, seed=scenario.config.seed)
