"""Channel estimation from Hadamard-coded pilot measurements.

Per subcarrier, the received pilot blocks divided by the pilot symbol are
``y[t] = d[nu] + sum_n P[n, t] g_n[nu] + noise``. With ``P = H_N`` the
element responses follow from ``(1/N) * fwht(y)``; the all-ones first
Hadamard column makes slot 0 hold ``g_0 + d`` (aliasing). Designs with
negated block pairs separate ``d`` from ``g_0``.

Each frequency response of an M-tap channel lies in the column space of
the K x M delay matrix, so projecting onto it removes a fraction
``1 - M/K`` of the estimation noise.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .core import DimensionError, SystemDims, delay_matrix, dft_channel, fwht, hadamard
from .simulator import PilotDataset, hadamard_repetitions, pilot_block_layout


class PilotFormatError(ValueError):
    """The pilot matrix does not follow a supported Hadamard design."""


@dataclass
class ChannelEstimate:
    """Estimated affine channel of one user.

    When ``aliasing_resolved`` is False, ``direct_freq`` is zero and row 0
    of ``element_freq`` holds ``g_0 + d``; configurations must then keep
    element 0 in state +1.
    """

    dims: SystemDims
    direct_freq: np.ndarray
    element_freq: np.ndarray
    aliasing_resolved: bool
    element_taps: np.ndarray | None = None
    direct_taps: np.ndarray | None = None
    noise_variance_estimate: float | None = None
    # Number of pilot blocks averaged per element estimate; sets the
    # noise level of element_freq relative to the per-bin noise.
    num_measurements: int = 0
    pilot_power: float = 1.0

    @property
    def projected(self) -> bool:
        return self.element_taps is not None

    def compose(self, theta) -> np.ndarray:
        """Estimated frequency response ``d + sum_n theta_n g_n`` (K,)."""
        theta = np.asarray(theta)
        if not self.aliasing_resolved and theta[0] != 1:
            raise ValueError(
                "element 0 is aliased with the direct path; its state must stay +1"
            )
        return self.direct_freq + theta.astype(np.float64) @ self.element_freq

    @classmethod
    def from_taps(cls, dims: SystemDims, direct_taps, element_taps, aliasing_resolved=True):
        """Exact estimate built from impulse responses (ground truth or a file)."""
        direct_taps = np.asarray(direct_taps, dtype=np.complex128)
        element_taps = np.asarray(element_taps, dtype=np.complex128)
        return cls(
            dims=dims,
            direct_freq=dft_channel(direct_taps, dims),
            element_freq=dft_channel(element_taps, dims),
            aliasing_resolved=aliasing_resolved,
            element_taps=element_taps,
            direct_taps=direct_taps,
        )


def _equalized(dataset: PilotDataset, user: int) -> np.ndarray:
    xbar = dataset.transmit_signal
    if np.any(xbar == 0):
        raise ZeroDivisionError("pilot symbol has zero entries; cannot equalize")
    if not 0 <= user < dataset.num_users:
        raise IndexError(f"user {user} not in dataset with {dataset.num_users} users")
    return dataset.received[:, :, user] / xbar[:, None]


def invert_hadamard_pilots(dataset: PilotDataset, user: int = 0) -> ChannelEstimate:
    """Frequency-domain least-squares estimate for one user.

    Uses all blocks when the design has an even number (>= 2) of blocks
    from :func:`~irsopt.simulator.build_hadamard_pilots`; otherwise only the
    first N columns, which must be ``H_N``.
    """
    dims = dataset.dims
    N = dims.N
    pilots = dataset.pilot_matrix
    if not np.all(np.abs(pilots) == 1):
        raise PilotFormatError("pilot matrix entries must be +1 or -1")
    y = _equalized(dataset, user)  # (K, T)
    reps = hadamard_repetitions(pilots, dims)
    if reps is not None and reps >= 2 and reps % 2 == 0:
        layout = pilot_block_layout(reps)
        blocks = [y[:, b * N:(b + 1) * N] for b in range(reps)]
        direct = sum(blk.sum(axis=1) for blk in blocks) / (reps * N)
        elements = np.zeros((dims.K, N), dtype=np.complex128)
        for b in range(0, reps, 2):
            shift, _ = layout[b]
            diff = 0.5 * (blocks[b] - blocks[b + 1])
            elements += np.roll(fwht(diff, axis=1), shift, axis=1)
        elements /= N * (reps // 2)
        return ChannelEstimate(
            dims=dims,
            direct_freq=direct,
            element_freq=np.ascontiguousarray(elements.T),
            aliasing_resolved=True,
            num_measurements=reps * N,
            pilot_power=float(np.mean(np.abs(dataset.transmit_signal) ** 2)),
        )
    if pilots.shape[1] < N or not np.array_equal(pilots[:, :N], hadamard(N)):
        raise PilotFormatError("the first N pilot columns are not the Sylvester Hadamard matrix")
    elements = fwht(y[:, :N], axis=1) / N
    return ChannelEstimate(
        dims=dims,
        direct_freq=np.zeros(dims.K, dtype=np.complex128),
        element_freq=np.ascontiguousarray(elements.T),
        aliasing_resolved=False,
        num_measurements=N,
        pilot_power=float(np.mean(np.abs(dataset.transmit_signal) ** 2)),
    )


def project_to_delay_subspace(estimate: ChannelEstimate, dims: SystemDims | None = None) -> ChannelEstimate:
    """Least-squares fit of every response onto M-tap impulse responses.

    Because ``F^H F = K I``, the fit is ``taps = F^H @ response / K``.
    """
    dims = dims or estimate.dims
    if estimate.element_freq.shape[-1] != dims.K:
        raise DimensionError(
            f"estimate has {estimate.element_freq.shape[-1]} subcarriers, expected K={dims.K}"
        )
    F = delay_matrix(dims)
    FH = F.conj().T / dims.K
    element_taps = estimate.element_freq @ FH.T
    direct_taps = FH @ estimate.direct_freq
    return dataclasses.replace(
        estimate,
        element_freq=element_taps @ F.T,
        direct_freq=F @ direct_taps,
        element_taps=element_taps,
        direct_taps=direct_taps,
    )


def estimate_noise_variance(raw: ChannelEstimate, projected: ChannelEstimate) -> float:
    """Per-bin receiver noise variance ``N0 * B`` from the projection residual.

    The residual of each element row carries ``K - M`` noise dimensions of
    variance ``N0 B / (T |x|^2)``, with T the number of pilot blocks.
    """
    dims = projected.dims
    if dims.K == dims.M:
        raise DimensionError("K == M leaves no residual degrees of freedom")
    if not projected.projected:
        raise ValueError("second argument must be a projected estimate")
    residual = raw.element_freq - projected.element_freq
    n_rows = residual.shape[0]
    per_element = float(np.sum(np.abs(residual) ** 2)) / (n_rows * (dims.K - dims.M))
    return per_element * raw.num_measurements * raw.pilot_power


def estimate_channel(dataset: PilotDataset, user: int = 0) -> ChannelEstimate:
    """Invert, project, and attach the noise-variance estimate."""
    raw = invert_hadamard_pilots(dataset, user)
    projected = project_to_delay_subspace(raw)
    projected.noise_variance_estimate = estimate_noise_variance(raw, projected)
    return projected
