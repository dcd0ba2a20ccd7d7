"""Forecasting algorithm: 27 states from volatility ranks and fundamental gap,
27 actions choosing a technical tool, its look-back and the chartist weight."""

from __future__ import annotations

from typing import List, Sequence

import numpy as np

from .agents import forecast_interval

# percentile cut-offs for the two volatility components
VOL_LOW, VOL_HIGH = 0.25, 0.75
# absolute bands on the mean relative gap |P - B| / P
GAP_LOW, GAP_HIGH = 0.10, 0.30

# reward for a percentile falling in [edge_k, edge_k+1)
REWARD_EDGES = (0.05, 0.25, 0.50, 0.75, 0.95)
ERROR_REWARDS = (4, 2, 1, -1, -2, -4)

HINDSIGHT_REWARD = 4


class PriceHistory:
    """Append-only price series with prefix sums for O(1) window statistics.

    Squares are accumulated on prices shifted by the first observation to
    limit cancellation in the variance.
    """

    __slots__ = ("prices", "_cum", "_cum_sq", "_shift", "_var_cache")

    def __init__(self, prices: Sequence[float] = ()):
        self.prices: List[float] = []
        self._cum: List[float] = [0.0]
        self._cum_sq: List[float] = [0.0]
        self._shift = prices[0] if len(prices) else 0.0
        self._var_cache: dict = {}
        for p in prices:
            self.append(p)

    def append(self, p: float) -> None:
        d = p - self._shift
        self.prices.append(p)
        self._cum.append(self._cum[-1] + p)
        self._cum_sq.append(self._cum_sq[-1] + d * d)
        self._var_cache.clear()

    def mean(self, start: int, stop: int) -> float:
        """Mean over the inclusive index range [start, stop]."""
        return (self._cum[stop + 1] - self._cum[start]) / (stop - start + 1)

    def variance(self, start: int, stop: int) -> float:
        """Population variance over the inclusive index range [start, stop]."""
        n = stop - start + 1
        if n < 2:
            return 0.0
        mean = (self._cum[stop + 1] - self._cum[start]) / n
        m = mean - self._shift
        v = (self._cum_sq[stop + 1] - self._cum_sq[start]) / n - m * m
        # prefix-sum round-off on flat windows
        return v if v > 1e-13 * mean * mean else 0.0

    def trailing_variance(self, length: int) -> float:
        """Variance of the last ``length + 1`` prices (or all available)."""
        v = self._var_cache.get(length)
        if v is None:
            stop = len(self.prices) - 1
            v = self.variance(max(0, stop - length), stop)
            self._var_cache[length] = v
        return v

    def __len__(self) -> int:
        return len(self.prices)


def band(value: float, low: float, high: float) -> int:
    if value < low:
        return 0
    if value > high:
        return 2
    return 1


def encode_state_f(long_pct: float, short_pct: float, mean_gap: float) -> int:
    return band(long_pct, VOL_LOW, VOL_HIGH) * 9 + band(short_pct, VOL_LOW, VOL_HIGH) * 3 + band(
        mean_gap, GAP_LOW, GAP_HIGH
    )


def decode_state_f(index: int) -> tuple[int, int, int]:
    return index // 9, (index // 3) % 3, index % 3


def decode_action_f(index: int) -> tuple[int, int, int]:
    return index // 9, (index // 3) % 3, index % 3


def encode_action_f(a0: int, a1: int, a2: int) -> int:
    return a0 * 9 + a1 * 3 + a2


def technical_from_means(p_now: float, older: float, recent: float, a0: int) -> float:
    """Mean-reverting (0), moving-average (1) or trend-following (2) projection."""
    if a0 == 0:
        return p_now + older - recent
    if a0 == 1:
        return 0.5 * (older + recent)
    return p_now - older + recent


def technical_forecast(prices: Sequence[float], a0: int, interval: int) -> float:
    """Projection from the last price and the means over
    [t-2T, t-T] and [t-T, t] of ``prices`` (t = last index)."""
    if interval < 1:
        raise ValueError("forecast interval must be at least one day")
    t = len(prices) - 1
    if t < 2 * interval:
        raise ValueError("insufficient price history for forecast interval")
    p = np.asarray(prices, dtype=float)
    older = p[t - 2 * interval : t - interval + 1].mean()
    recent = p[t - interval : t + 1].mean()
    return technical_from_means(float(p[t]), float(older), float(recent), a0)


def chartist_weight(reflexivity: float, a2: int) -> float:
    if reflexivity <= 0.5:
        return (0.0, reflexivity, 2.0 * reflexivity)[a2]
    return (2.0 * reflexivity - 1.0, reflexivity, 1.0)[a2]


def blend_forecast(technical: float, fundamental: float, reflexivity: float, a2: int) -> float:
    alpha = chartist_weight(reflexivity, a2)
    return alpha * technical + (1.0 - alpha) * fundamental


def reward_from_percentile(p: float, rewards: Sequence[int] = ERROR_REWARDS) -> int:
    for edge, r in zip(REWARD_EDGES, rewards):
        if p < edge:
            return r
    return rewards[-1]


def forecast_error(h_past: float, p_now: float) -> float:
    if p_now <= 0.0:
        raise ValueError(f"non-positive realised price {p_now!r}")
    return abs(h_past - p_now) / p_now


def forecast_at(history: PriceHistory, t: int, fundamental: float, reflexivity: float,
                horizon: int, action: int) -> float:
    """Combined forecast H that ``action`` would have produced at step ``t``."""
    a0, a1, a2 = action // 9, (action // 3) % 3, action % 3
    n = forecast_interval(a1, horizon)
    older = history.mean(t - 2 * n, t - n)
    recent = history.mean(t - n, t)
    tech = technical_from_means(history.prices[t], older, recent, a0)
    return blend_forecast(tech, fundamental, reflexivity, a2)


def best_action_hindsight_f(history: PriceHistory, t: int, fundamental: float,
                            reflexivity: float, horizon: int, p_now: float) -> int:
    """Action whose forecast issued at ``t`` lands closest to ``p_now``;
    ties go to the lowest index."""
    p_t = history.prices[t]
    weights = [chartist_weight(reflexivity, a2) for a2 in range(3)]
    best, best_err = 0, float("inf")
    for a1 in range(3):
        n = forecast_interval(a1, horizon)
        older = history.mean(t - 2 * n, t - n)
        recent = history.mean(t - n, t)
        for a0 in range(3):
            tech = technical_from_means(p_t, older, recent, a0)
            for a2 in range(3):
                w = weights[a2]
                err = abs(w * tech + (1.0 - w) * fundamental - p_now)
                a = a0 * 9 + a1 * 3 + a2
                if err < best_err or (err == best_err and a < best):
                    best, best_err = a, err
    return best
