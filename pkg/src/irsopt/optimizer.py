"""Binary IRS configuration search maximizing the OFDM achievable rate.

The rate of configuration ``theta`` under an estimate is

    R = B / (K + M - 1) * sum_nu log2(1 + snr_scale * |h_theta[nu]|^2)

with ``snr_scale = P / (B N0)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import SystemDims, check_configuration, sign
from .estimator import ChannelEstimate

EXHAUSTIVE_LIMIT = 20
SMALL_PROBLEM = 1 << 16


class AliasingError(ValueError):
    """A configuration flips element 0 while it is aliased with the direct path."""


class SubmissionError(ValueError):
    """The submission matrix violates the shape or +-1 contract."""


@dataclass(frozen=True)
class OptimizationSettings:
    snr_scale: float
    bandwidth: float = 1e7
    # None: exact enumeration of every sign pattern of the phase scan.
    phase_grid_size: int | None = None
    max_flip_passes: int = 20
    # Narrowband starting points (all taps, then evenly spaced subcarriers)
    # and how many of the best ones are refined by local search. None: every
    # start on small problems (N * K <= SMALL_PROBLEM), otherwise 2.
    max_starts: int = 64
    refine_starts: int | None = None
    # Relative rate gain below which local search stops.
    improvement_tolerance: float = 1e-6

    def __post_init__(self):
        if not self.snr_scale > 0 or not self.bandwidth > 0:
            raise ValueError("snr_scale and bandwidth must be positive")
        if self.phase_grid_size is not None and self.phase_grid_size < 1:
            raise ValueError("phase_grid_size must be >= 1")
        if self.max_flip_passes < 0 or not self.improvement_tolerance > 0:
            raise ValueError("max_flip_passes must be >= 0 and improvement_tolerance > 0")
        if self.max_starts < 1 or (self.refine_starts is not None and self.refine_starts < 0):
            raise ValueError("max_starts must be >= 1 and refine_starts >= 0")


@dataclass
class ConfigurationResult:
    theta: np.ndarray
    predicted_rate: float
    method: str
    flips_performed: int = 0
    history: list[float] = field(default_factory=list, repr=False)


def rate_from_response(hbar, dims: SystemDims, snr_scale: float, bandwidth: float) -> float:
    """Achievable rate in bit/s of a frequency response ``hbar`` (last axis K)."""
    gain = snr_scale * np.abs(hbar) ** 2
    return bandwidth / dims.block_length * np.sum(np.log2(1.0 + gain), axis=-1)


def objective_rate(estimate: ChannelEstimate, theta, settings: OptimizationSettings) -> float:
    theta = check_configuration(theta, estimate.dims.N)
    if not estimate.aliasing_resolved and theta[0] != 1:
        raise AliasingError("element 0 is aliased with the direct path; theta[0] must be +1")
    return float(rate_from_response(estimate.compose(theta), estimate.dims,
                                    settings.snr_scale, settings.bandwidth))


def narrowband_value(g, d, theta) -> float:
    return float(np.abs(d + np.asarray(theta, dtype=np.float64) @ np.asarray(g)))


def optimize_narrowband_exact(g, d=0.0, phase_grid_size: int | None = None):
    """Maximize ``|d + sum_n theta_n g_n|`` over ``theta in {-1, +1}^N``.

    For a common phase ``phi`` the best signs are
    ``sign(Re(g_n exp(-j phi)))``; the pattern only changes where some
    ``g_n exp(-j phi)`` is purely imaginary. Sweeping ``phi`` once around the
    circle therefore visits every candidate optimum, one sign flip per
    breakpoint. With ``phase_grid_size`` set, a uniform phase grid is scanned
    instead (approximate).

    Returns ``(theta, value)``.
    """
    g = np.asarray(g, dtype=np.complex128).ravel()
    d = complex(d)
    N = g.shape[0]
    if N == 0:
        return np.zeros(0, dtype=np.int8), abs(d)
    if phase_grid_size is not None:
        phis = 2 * np.pi * np.arange(phase_grid_size) / phase_grid_size
        patterns = sign(np.real(g[None, :] * np.exp(-1j * phis)[:, None]))
        values = np.abs(d + patterns.astype(np.float64) @ g)
        best = patterns[int(np.argmax(values))]
        return best, narrowband_value(g, d, best)

    active = np.flatnonzero(g != 0)
    theta = np.ones(N, dtype=np.int8)
    if active.size == 0:
        return theta, abs(d)
    ga = g[active]
    base = np.angle(ga)
    # Both zero crossings of Re(g_n exp(-j phi)), wrapped to [0, 2 pi).
    cross = np.mod(np.concatenate((base + np.pi / 2, base - np.pi / 2)), 2 * np.pi)
    owner = np.concatenate((np.arange(active.size), np.arange(active.size)))
    order = np.argsort(cross, kind="stable")
    cross, owner = cross[order], owner[order]
    # Start just after the last crossing (i.e. before the first, cyclically).
    gaps = np.diff(np.append(cross, cross[0] + 2 * np.pi))
    start = cross[-1] + gaps[-1] / 2
    s0 = sign(np.real(ga * np.exp(-1j * start))).astype(np.float64)
    # Each element crosses twice: first to -s0, then back to s0. A crossing
    # changes the sum by 2 * new_sign * g.
    first = np.full(active.size, cross.size)
    np.minimum.at(first, owner, np.arange(cross.size))
    new_sign = np.where(np.arange(cross.size) == first[owner], -s0[owner], s0[owner])
    deltas = 2 * new_sign * ga[owner]
    sums = d + s0 @ ga + np.concatenate(([0.0], np.cumsum(deltas)))
    values = np.abs(sums)
    # Re-evaluate near-ties exactly to absorb cumulative rounding.
    top = np.flatnonzero(values >= values.max() * (1 - 1e-9))
    best_theta, best_value = None, -np.inf
    for k in top:
        counts = np.bincount(owner[:k], minlength=active.size)
        cand = np.ones(N, dtype=np.int8)
        cand[active] = np.where(counts % 2 == 0, s0, -s0).astype(np.int8)
        value = narrowband_value(g, d, cand)
        if value > best_value:
            best_theta, best_value = cand, value
    return best_theta, best_value


def _pinned(estimate: ChannelEstimate) -> int:
    """Number of leading elements that must stay at +1 (aliased element 0)."""
    return 0 if estimate.aliasing_resolved else 1


def _flip_rates(rows, Gr, Gi, G4, h, theta, snr_scale, prefactor) -> np.ndarray:
    """Exact rates after flipping each element in ``rows``."""
    # |h - 2 theta_n g_n|^2 = |h|^2 + 4|g_n|^2 - 4 theta_n Re(conj(h) g_n)
    power = Gr[rows] * h.real
    power += Gi[rows] * h.imag
    power *= (-4.0 * theta[rows])[:, None]
    power += G4[rows]
    power += np.abs(h) ** 2
    np.maximum(power, 0.0, out=power)
    power *= snr_scale
    np.log1p(power, out=power)
    return prefactor * power.sum(axis=1)


def _best_flip(Gr, Gi, G4, h, theta, rate, snr_scale, prefactor, pinned, batch=64):
    """Index and rate of the best single flip.

    ``log1p`` is concave, so its tangent at the current response bounds the
    gain of every flip from above by a linear score. Candidates are scored
    exactly in decreasing bound order until no remaining bound can beat the
    best exact gain, which returns the same flip as scoring all of them.
    """
    w = snr_scale / (1.0 + snr_scale * np.abs(h) ** 2)
    bound = prefactor * (G4 @ w - 4.0 * theta * (Gr @ (w * h.real) + Gi @ (w * h.imag)))
    order = pinned + np.argsort(-bound[pinned:], kind="stable")
    best_n, best_rate = -1, -np.inf
    for start in range(0, order.size, batch):
        rows = np.sort(order[start:start + batch])
        if bound[rows].max() + rate <= best_rate:
            break
        rates = _flip_rates(rows, Gr, Gi, G4, h, theta, snr_scale, prefactor)
        i = int(np.argmax(rates))
        if rates[i] > best_rate or (rates[i] == best_rate and rows[i] < best_n):
            best_n, best_rate = int(rows[i]), float(rates[i])
    return best_n, best_rate


def _local_search(estimate, theta, settings, pinned, parts=None):
    """Greedy best-flip ascent; each pass finds the best single flip and applies it."""
    G = estimate.element_freq
    Gr, Gi, G4 = parts if parts is not None else _flip_parts(G)
    theta = theta.copy()
    h = estimate.compose(theta)
    rate = objective_rate(estimate, theta, settings)
    history = [rate]
    prefactor = settings.bandwidth / estimate.dims.block_length / np.log(2.0)
    for _ in range(settings.max_flip_passes):
        n, new_rate = _best_flip(Gr, Gi, G4, h, theta.astype(np.float64), rate,
                                 settings.snr_scale, prefactor, pinned)
        if n < 0 or not new_rate - rate > settings.improvement_tolerance * max(rate, np.finfo(float).tiny):
            break
        h = h - 2.0 * theta[n] * G[n]
        theta[n] = -theta[n]
        rate = new_rate
        history.append(rate)
    return theta, history


def _flip_parts(G):
    return np.ascontiguousarray(G.real), np.ascontiguousarray(G.imag), 4.0 * np.abs(G) ** 2


def _narrowband_starts(estimate, settings, pinned):
    """Phase-aligned configurations for every tap and a spread of subcarriers.

    The strongest tap comes first.
    """
    dims = estimate.dims
    taps = estimate.element_taps
    direct_taps = estimate.direct_taps if estimate.direct_taps is not None else np.zeros(dims.M)
    energy = np.sum(np.abs(taps) ** 2, axis=0) + np.abs(direct_taps) ** 2
    tap_order = np.argsort(-energy, kind="stable")[:settings.max_starts]
    problems = [(taps[:, l], direct_taps[l]) for l in tap_order]
    n_sub = min(dims.K, settings.max_starts - len(problems))
    if n_sub > 0:
        for nu in np.linspace(0, dims.K, n_sub, endpoint=False).astype(int):
            problems.append((estimate.element_freq[:, nu], estimate.direct_freq[nu]))
    starts = []
    for g, d in problems:
        theta = np.ones(dims.N, dtype=np.int8)
        # An aliased element 0 is folded into the fixed term.
        d0 = d + (g[0] if pinned else 0.0)
        theta[pinned:], _ = optimize_narrowband_exact(g[pinned:], d0, settings.phase_grid_size)
        starts.append(theta)
    return starts


def optimize_wideband(estimate: ChannelEstimate, settings: OptimizationSettings) -> ConfigurationResult:
    """Multi-start phase alignment followed by greedy best-flip refinement.

    Starting points are the exact narrowband optima of each delay tap and of
    a spread of subcarriers. The dominant-tap start and the
    ``refine_starts`` best starts are refined by greedy single flips; the
    best refined, start, or all-ones configuration is returned.
    """
    if estimate.element_taps is None:
        raise ValueError("optimize_wideband needs a delay-projected estimate")
    N = estimate.dims.N
    pinned = _pinned(estimate)
    starts = _narrowband_starts(estimate, settings, pinned)
    S = np.stack(starts).astype(np.float64)
    parts = _flip_parts(estimate.element_freq)
    responses = estimate.direct_freq[None, :] + (S @ parts[0] + 1j * (S @ parts[1]))
    start_rates = rate_from_response(responses, estimate.dims, settings.snr_scale, settings.bandwidth)
    refine = settings.refine_starts
    if refine is None:
        refine = len(starts) if N * estimate.dims.K <= SMALL_PROBLEM else 2
    ranked = [int(i) for i in np.argsort(-start_rates, kind="stable")[:refine]]
    chosen = [0] + [i for i in ranked if i != 0]

    ones = np.ones(N, dtype=np.int8)
    best = ConfigurationResult(ones, objective_rate(estimate, ones, settings), "all-ones")
    i_best = int(np.argmax(start_rates))
    init_rate = objective_rate(estimate, starts[i_best], settings)
    if init_rate > best.predicted_rate:
        label = "dominant-tap" if i_best == 0 else "narrowband-start"
        best = ConfigurationResult(starts[i_best], init_rate, label)
    for i in chosen:
        theta, history = _local_search(estimate, starts[i], settings, pinned, parts)
        rate = objective_rate(estimate, theta, settings)
        if rate > best.predicted_rate:
            best = ConfigurationResult(theta, rate, "wideband-greedy", len(history) - 1, history)
    return best


def _lex_configurations(start: int, stop: int, N: int) -> np.ndarray:
    """Configurations with indices [start, stop) in lexicographic order, +1 < -1."""
    idx = np.arange(start, stop, dtype=np.int64)[:, None]
    bits = (idx >> np.arange(N - 1, -1, -1, dtype=np.int64)[None, :]) & 1
    return (1 - 2 * bits).astype(np.int8)


def exhaustive_oracle(estimate: ChannelEstimate, settings: OptimizationSettings,
                      chunk: int = 1 << 12) -> ConfigurationResult:
    """True rate maximizer by enumerating all ``2^N`` configurations (N <= 20).

    Ties go to the lexicographically smallest configuration with +1 < -1.
    When element 0 is aliased it stays at +1.
    """
    N = estimate.dims.N
    if N > EXHAUSTIVE_LIMIT:
        raise ValueError(f"exhaustive search refused for N={N} > {EXHAUSTIVE_LIMIT}")
    total = 1 << (N - _pinned(estimate))
    best_rate, best_theta = -np.inf, None
    for start in range(0, total, chunk):
        configs = _lex_configurations(start, min(start + chunk, total), N)
        hbar = estimate.direct_freq[None, :] + configs.astype(np.float64) @ estimate.element_freq
        rates = rate_from_response(hbar, estimate.dims, settings.snr_scale, settings.bandwidth)
        i = int(np.argmax(rates))
        if rates[i] > best_rate:
            best_rate, best_theta = float(rates[i]), configs[i]
    return ConfigurationResult(best_theta, best_rate, "exhaustive")


def export_submission(results, num_users: int = 50, num_elements: int | None = None) -> np.ndarray:
    """Stack per-user configurations into the N x users submission matrix."""
    results = list(results)
    if len(results) != num_users:
        raise SubmissionError(f"expected {num_users} results, got {len(results)}")
    columns = [np.asarray(r.theta if isinstance(r, ConfigurationResult) else r) for r in results]
    N = num_elements if num_elements is not None else columns[0].shape[0]
    theta = np.empty((N, num_users), dtype=np.int8)
    for col, c in enumerate(columns):
        if c.ndim != 1 or c.shape[0] != N:
            raise SubmissionError(f"column {col} has shape {c.shape}, expected ({N},)")
        bad = np.flatnonzero((c != 1) & (c != -1))
        if bad.size:
            raise SubmissionError(
                f"entry (row {bad[0]}, col {col}) is {c[bad[0]]!r}, not +1/-1"
            )
        theta[:, col] = c
    return theta
