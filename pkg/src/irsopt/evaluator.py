"""Ground-truth scoring of selected IRS configurations.

The competition average weights non-line-of-sight users twice. We report the
weighted *mean* ``sum w_i R_i / sum w_i`` so the figure stays in bit/s.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .core import check_configuration, compose_channel, dft_channel
from .estimator import ChannelEstimate
from .optimizer import (
    EXHAUSTIVE_LIMIT,
    ConfigurationResult,
    OptimizationSettings,
    exhaustive_oracle,
    rate_from_response,
)
from .simulator import GroundTruthScenario

WEIGHTING_NOTE = "weighted mean: NLoS users weight 2, LoS users weight 1, normalized by the weight sum"

NLOS_WEIGHT = 2.0
LOS_WEIGHT = 1.0


@dataclass
class UserRate:
    user: int
    true_rate: float
    predicted_rate: float | None
    los: bool
    dominant_gain: float | None = None


@dataclass
class RateReport:
    per_user: list[UserRate]
    weighted_average: float
    baselines: dict[str, float] = field(default_factory=dict)
    prediction_gap: dict[str, float] = field(default_factory=dict)
    note: str = WEIGHTING_NOTE

    def to_dict(self) -> dict:
        return {
            "weighted_average": self.weighted_average,
            "baselines": dict(self.baselines),
            "prediction_gap": dict(self.prediction_gap),
            "note": self.note,
            "per_user": [asdict(u) for u in self.per_user],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_table(self) -> str:
        lines = [f"{'user':>5} {'los':>4} {'true Mbit/s':>12} {'pred Mbit/s':>12} {'gain@peak':>10}"]
        for u in self.per_user:
            pred = "-" if u.predicted_rate is None else f"{u.predicted_rate / 1e6:.4f}"
            gain = "-" if u.dominant_gain is None else f"{u.dominant_gain:.1f}"
            lines.append(
                f"{u.user:>5} {'yes' if u.los else 'no':>4} {u.true_rate / 1e6:>12.4f} {pred:>12} {gain:>10}"
            )
        lines.append("")
        lines.append(f"{'submitted':<12} {self.weighted_average / 1e6:>12.4f} Mbit/s")
        for label, value in self.baselines.items():
            lines.append(f"{label:<12} {value / 1e6:>12.4f} Mbit/s")
        lines.append(f"({self.note})")
        return "\n".join(lines)


def true_rate(scenario: GroundTruthScenario, user: int, theta,
              power: float | None = None, bandwidth: float | None = None,
              noise_psd: float | None = None) -> float:
    """Achievable rate of ``theta`` on the true channel of ``user`` in bit/s."""
    cfg = scenario.config
    power = cfg.power if power is None else power
    bandwidth = cfg.bandwidth if bandwidth is None else bandwidth
    noise_psd = cfg.noise_psd if noise_psd is None else noise_psd
    if not 0 <= user < scenario.num_users:
        raise IndexError(f"user {user} not in scenario with {scenario.num_users} users")
    theta = check_configuration(theta, scenario.dims.N)
    hbar = dft_channel(compose_channel(scenario.models[user], theta), scenario.dims)
    return float(rate_from_response(hbar, scenario.dims, power / (bandwidth * noise_psd), bandwidth))


def weighted_average_rate(entries) -> float:
    """Weighted mean of ``(rate, los)`` pairs or :class:`UserRate` entries."""
    rates, weights = [], []
    for e in entries:
        rate, los = (e.true_rate, e.los) if isinstance(e, UserRate) else e
        rates.append(rate)
        weights.append(LOS_WEIGHT if los else NLOS_WEIGHT)
    if not rates:
        raise ValueError("weighted average of zero users is undefined")
    return float(np.dot(weights, rates) / np.sum(weights))


def dominant_subcarrier_gain(scenario: GroundTruthScenario, user: int, theta) -> float:
    """Power gain of ``theta`` over the random-configuration mean at the strongest subcarrier.

    The subcarrier maximizes the random-configuration mean power
    ``|d|^2 + sum_n |g_n|^2``.
    """
    direct_f, element_f = scenario.frequency_model(user)
    mean_power = np.abs(direct_f) ** 2 + np.sum(np.abs(element_f) ** 2, axis=0)
    nu = int(np.argmax(mean_power))
    h = direct_f[nu] + np.asarray(theta, dtype=np.float64) @ element_f[:, nu]
    return float(np.abs(h) ** 2 / mean_power[nu])


def random_configuration(N: int, seed: int, user: int) -> np.ndarray:
    rng = np.random.default_rng([seed, 0x5EED, user])
    return np.where(rng.uniform(size=N) < 0.5, -1, 1).astype(np.int8)


def _theta_of(result):
    return result.theta if isinstance(result, ConfigurationResult) else np.asarray(result)


def compare_report(scenario: GroundTruthScenario, results, baselines=("random", "all-ones", "oracle"),
                   baseline_seed: int = 0) -> RateReport:
    """Score per-user configurations against the ground truth.

    ``results`` is a sequence (indexed by user) or a mapping user -> result;
    each entry is a :class:`ConfigurationResult` or a bare configuration.
    Baselines: ``"random"`` (seeded), ``"all-ones"``, and ``"oracle"``
    (exhaustive search on the true channel; only when N <= 20).
    """
    if not isinstance(results, dict):
        results = dict(enumerate(results))
    missing = [u for u in range(scenario.num_users) if u not in results]
    if missing:
        raise KeyError(f"no configuration for users {missing}")
    cfg = scenario.config
    N = scenario.dims.N

    per_user = []
    for u in range(scenario.num_users):
        res = results[u]
        theta = _theta_of(res)
        predicted = res.predicted_rate if isinstance(res, ConfigurationResult) else None
        per_user.append(UserRate(
            user=u,
            true_rate=true_rate(scenario, u, theta),
            predicted_rate=predicted,
            los=bool(scenario.los_flags[u]),
            dominant_gain=dominant_subcarrier_gain(scenario, u, theta),
        ))

    out = {}
    for label in baselines:
        if label == "random":
            thetas = [random_configuration(N, baseline_seed, u) for u in range(scenario.num_users)]
        elif label == "all-ones":
            thetas = [np.ones(N, dtype=np.int8)] * scenario.num_users
        elif label == "oracle":
            if N > EXHAUSTIVE_LIMIT:
                continue
            settings = OptimizationSettings(snr_scale=cfg.power / cfg.noise_variance, bandwidth=cfg.bandwidth)
            thetas = []
            for u, model in enumerate(scenario.models):
                exact = ChannelEstimate.from_taps(scenario.dims, model.direct, model.elements)
                thetas.append(exhaustive_oracle(exact, settings).theta)
        else:
            raise ValueError(f"unknown baseline {label!r}")
        out[label] = weighted_average_rate(
            (true_rate(scenario, u, t), bool(scenario.los_flags[u])) for u, t in enumerate(thetas)
        )

    gaps = [abs(p.predicted_rate - p.true_rate) / p.true_rate
            for p in per_user if p.predicted_rate is not None and p.true_rate > 0]
    gap = {"max_relative": max(gaps), "mean_relative": float(np.mean(gaps))} if gaps else {}
    return RateReport(per_user, weighted_average_rate(per_user), out, gap)
