"""Signal and channel primitives for an IRS-aided OFDM link.

Conventions used throughout the package:

* Time/frequency transforms of *signals* are unitary (``1/sqrt(K)``).
* The frequency response of an M-tap channel is the plain, unscaled
  K-point DFT of the zero-padded taps, so ``F^H F = K I`` for the K x M
  delay matrix ``F``.
* Hadamard matrices are Sylvester ordered; the first row/column is all ones.
* A channel is affine in the configuration:
  ``h_theta = direct + sum_n theta_n * elements[n]``.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numpy as np


class DimensionError(ValueError):
    """Array shapes contradict the system dimensions."""


def is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class SystemDims:
    """Subcarrier count ``K``, channel taps ``M`` and IRS element count ``N``."""

    K: int
    M: int
    N: int
    # Configuration search alone does not need Hadamard pilots; estimation does.
    require_power_of_two: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        for name in ("K", "M", "N"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise DimensionError(f"{name} must be a positive integer, got {value!r}")
        if not self.K > self.M:
            raise DimensionError(f"need K > M, got K={self.K}, M={self.M}")
        if self.require_power_of_two and not is_power_of_two(self.N):
            raise DimensionError(f"N must be a power of two, got {self.N}")

    @property
    def block_length(self) -> int:
        """Samples per OFDM block including the cyclic prefix."""
        return self.K + self.M - 1

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.K, self.M, self.N)

    @classmethod
    def parse(cls, text: str) -> "SystemDims":
        parts = [p.strip() for p in text.split(",")]
        if len(parts) != 3:
            raise DimensionError(f"expected 'K,M,N', got {text!r}")
        K, M, N = (int(p) for p in parts)
        return cls(K, M, N)


def sign(x) -> np.ndarray:
    """Elementwise sign in {-1, +1} with ``sign(0) = +1``."""
    x = np.asarray(x)
    return np.where(x < 0, -1, 1).astype(np.int8)


def check_configuration(theta, N: int | None = None) -> np.ndarray:
    """Validate an IRS configuration and return it as an int8 array."""
    theta = np.asarray(theta)
    if theta.ndim != 1:
        raise DimensionError(f"configuration must be 1-D, got shape {theta.shape}")
    if N is not None and theta.shape[0] != N:
        raise DimensionError(f"configuration has {theta.shape[0]} entries, expected {N}")
    bad = np.flatnonzero((theta != 1) & (theta != -1))
    if bad.size:
        raise ValueError(f"configuration entry {bad[0]} is {theta[bad[0]]!r}, not +1/-1")
    return theta.astype(np.int8)


@dataclass(frozen=True)
class AffineChannelModel:
    """Direct impulse response ``d`` (M,) and per-element responses ``g`` (N, M).

    ``elements[n]`` is the channel through element n in state +1; state -1
    negates it.
    """

    direct: np.ndarray
    elements: np.ndarray

    def __post_init__(self):
        direct = np.asarray(self.direct, dtype=np.complex128)
        elements = np.asarray(self.elements, dtype=np.complex128)
        if direct.ndim != 1 or elements.ndim != 2 or elements.shape[1] != direct.shape[0]:
            raise DimensionError(
                f"direct {direct.shape} and elements {elements.shape} are inconsistent"
            )
        direct.setflags(write=False)
        elements.setflags(write=False)
        object.__setattr__(self, "direct", direct)
        object.__setattr__(self, "elements", elements)

    @property
    def num_elements(self) -> int:
        return self.elements.shape[0]

    @property
    def num_taps(self) -> int:
        return self.direct.shape[0]


def fwht(v, axis: int = -1) -> np.ndarray:
    """Unnormalized fast Walsh-Hadamard transform along ``axis``.

    Returns ``H_N @ v`` for the Sylvester-ordered Hadamard matrix, in
    ``O(N log N)`` per transformed vector.
    """
    x = np.moveaxis(np.asarray(v), axis, -1)
    x = np.array(x, dtype=np.result_type(x, np.float64), order="C")
    n = x.shape[-1]
    if not is_power_of_two(n):
        raise DimensionError(f"FWHT length must be a power of two, got {n}")
    flat = x.reshape(-1, n)
    # Butterflies run in place on small row batches to stay cache resident.
    rows = max(1, (1 << 16) // n)
    for start in range(0, flat.shape[0], rows):
        _butterflies(flat[start:start + rows])
    return np.moveaxis(x, -1, axis)


def _butterflies(x: np.ndarray) -> None:
    rows, n = x.shape
    h = 1
    while h < n:
        y = x.reshape(rows, n // (2 * h), 2, h)
        a = y[:, :, 0, :]
        b = y[:, :, 1, :]
        diff = a - b
        a += b
        b[...] = diff
        h *= 2


@functools.lru_cache(maxsize=8)
def _hadamard_cached(n: int) -> np.ndarray:
    H = np.ones((1, 1), dtype=np.int8)
    while H.shape[0] < n:
        H = np.block([[H, H], [H, -H]])
    H.setflags(write=False)
    return H


def hadamard(n: int) -> np.ndarray:
    """Sylvester Hadamard matrix of order ``n`` as int8 (read-only, cached)."""
    if not is_power_of_two(n):
        raise DimensionError(f"Hadamard order must be a power of two, got {n}")
    return _hadamard_cached(n)


def dft_signal(s, K: int | None = None) -> np.ndarray:
    """Unitary K-point DFT of a time-domain block (length K along the last axis)."""
    s = np.asarray(s, dtype=np.complex128)
    if K is not None and s.shape[-1] != K:
        raise DimensionError(f"signal has {s.shape[-1]} samples, expected K={K}")
    return np.fft.fft(s, axis=-1, norm="ortho")


def idft_signal(S) -> np.ndarray:
    """Inverse of :func:`dft_signal`."""
    return np.fft.ifft(np.asarray(S, dtype=np.complex128), axis=-1, norm="ortho")


def _check_taps(h, dims: SystemDims) -> np.ndarray:
    h = np.asarray(h, dtype=np.complex128)
    if h.shape[-1] != dims.M:
        raise DimensionError(f"impulse response has {h.shape[-1]} taps, expected M={dims.M}")
    return h


def dft_channel(h, dims: SystemDims) -> np.ndarray:
    """Frequency response ``sum_k h[k] exp(-2j pi k nu / K)``, no 1/sqrt(K) factor.

    Works along the last axis, so an (N, M) array of element responses maps
    to (N, K).
    """
    h = _check_taps(h, dims)
    return np.fft.fft(h, n=dims.K, axis=-1)


def delay_matrix(dims: SystemDims) -> np.ndarray:
    """K x M matrix ``F`` with ``F[nu, k] = exp(-2j pi k nu / K)``."""
    nu = np.arange(dims.K)[:, None]
    k = np.arange(dims.M)[None, :]
    return np.exp(-2j * np.pi * ((k * nu) % dims.K) / dims.K)


def add_cyclic_prefix(body, M: int) -> np.ndarray:
    """Prepend the last ``M - 1`` samples of a K-sample block."""
    body = np.asarray(body, dtype=np.complex128)
    if M < 1 or M - 1 > body.shape[-1]:
        raise DimensionError(f"cannot take a {M - 1}-sample prefix of {body.shape[-1]} samples")
    if M == 1:
        return body.copy()
    return np.concatenate((body[..., -(M - 1):], body), axis=-1)


def convolve_block(h, x) -> np.ndarray:
    """Noiseless FIR channel output for one cyclic-prefixed OFDM block.

    ``x`` holds ``K + M - 1`` samples (prefix then body). The linear
    convolution output is returned for the K steady-state samples after the
    prefix, which equals the circular convolution of ``h`` with the body.
    """
    h = np.asarray(h, dtype=np.complex128)
    x = np.asarray(x, dtype=np.complex128)
    if h.ndim != 1 or x.ndim != 1:
        raise DimensionError("convolve_block expects 1-D inputs")
    M = h.shape[0]
    K = x.shape[0] - (M - 1)
    if K < 1:
        raise DimensionError(f"block of {x.shape[0]} samples is shorter than the {M - 1}-sample prefix")
    return np.convolve(x, h)[M - 1:M - 1 + K]


def compose_channel(model: AffineChannelModel, theta) -> np.ndarray:
    """Impulse response ``direct + sum_n theta_n * elements[n]`` for configuration ``theta``."""
    theta = check_configuration(theta, model.num_elements)
    return model.direct + theta.astype(np.float64) @ model.elements


def apply_frequency_model(hbar, xbar, noise) -> np.ndarray:
    """Per-subcarrier model ``hbar * xbar + noise``."""
    hbar = np.asarray(hbar, dtype=np.complex128)
    xbar = np.asarray(xbar, dtype=np.complex128)
    noise = np.asarray(noise, dtype=np.complex128)
    if not hbar.shape == xbar.shape == noise.shape:
        raise DimensionError(
            f"shape mismatch: hbar {hbar.shape}, xbar {xbar.shape}, noise {noise.shape}"
        )
    return hbar * xbar + noise


def transmit_block(xbar, M: int) -> np.ndarray:
    """Time-domain block (prefix + body) carrying the frequency symbol ``xbar``."""
    return add_cyclic_prefix(idft_signal(xbar), M)
