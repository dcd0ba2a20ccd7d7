"""True fundamental values as multiplicative jump processes, and each agent's
persistently biased view of them."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from .core import NU_REF, T_Y

JUMPS_PER_YEAR = 12.70
JUMP_MEAN = 0.059
JUMP_SD = 0.0184
VIEW_PERSISTENCE = 0.97
VIEW_MEAN_ABS_ERROR = 0.0237
INITIAL_RANGE = (80.0, 120.0)


@dataclass
class FundamentalSeries:
    values: np.ndarray
    jump_times: np.ndarray
    amplitude: float


@dataclass
class FundamentalView:
    values: np.ndarray
    persistence: float
    noise_scale: float


@dataclass(frozen=True)
class JumpStats:
    annual_jumps: float
    mean_amplitude: float


def _jump_sizes(n: int, rng: np.random.Generator) -> np.ndarray:
    # normal truncated to the positive half line, by rejection
    out = rng.normal(JUMP_MEAN, JUMP_SD, n)
    bad = out <= 0.0
    while bad.any():
        out[bad] = rng.normal(JUMP_MEAN, JUMP_SD, int(bad.sum()))
        bad = out <= 0.0
    return out


def generate_fundamental(
    steps: int, amplitude: float, rng: np.random.Generator, initial: float | None = None
) -> FundamentalSeries:
    """Piecewise-constant series with Bernoulli jump arrivals.

    Each jump multiplies the level by ``1 ± A`` (sign equiprobable) where
    ``A`` is a positive normal draw scaled by ``amplitude / NU_REF``.
    """
    if initial is None:
        initial = rng.uniform(*INITIAL_RANGE)
    arrivals = rng.random(steps) < JUMPS_PER_YEAR / T_Y
    arrivals[0] = False
    jump_times = np.flatnonzero(arrivals)
    sizes = _jump_sizes(len(jump_times), rng) * (amplitude / NU_REF)
    signs = np.where(rng.random(len(jump_times)) < 0.5, -1.0, 1.0)
    factors = np.ones(steps)
    factors[jump_times] = np.maximum(1.0 + signs * sizes, 0.01)
    values = initial * np.cumprod(factors)
    return FundamentalSeries(values=values, jump_times=jump_times, amplitude=amplitude)


def approximate_fundamental(
    f: FundamentalSeries,
    rng: np.random.Generator,
    persistence: float = VIEW_PERSISTENCE,
    mean_abs_error: float = VIEW_MEAN_ABS_ERROR,
) -> FundamentalView:
    """Multiply ``f`` by ``1 + e(t)`` with ``e`` a stationary AR(1) whose
    mean absolute value is ``mean_abs_error``."""
    n = len(f.values)
    if mean_abs_error == 0.0:
        return FundamentalView(values=f.values.copy(), persistence=persistence, noise_scale=0.0)
    stationary_sd = mean_abs_error * np.sqrt(np.pi / 2.0)
    innovation_sd = stationary_sd * np.sqrt(1.0 - persistence**2)
    shocks = rng.normal(0.0, 1.0, n)
    shocks[0] *= stationary_sd
    shocks[1:] *= innovation_sd
    err = lfilter([1.0], [1.0, -persistence], shocks)
    values = f.values * np.maximum(1.0 + err, 0.01)
    return FundamentalView(values=values, persistence=persistence, noise_scale=innovation_sd)


def jump_statistics(values: np.ndarray) -> JumpStats:
    values = np.asarray(values, dtype=float)
    if len(values) < 2:
        return JumpStats(0.0, 0.0)
    prev, cur = values[:-1], values[1:]
    jumps = cur != prev
    count = int(jumps.sum())
    years = len(values) / T_Y
    if count == 0:
        return JumpStats(0.0, 0.0)
    amp = float(np.mean(np.abs(cur[jumps] - prev[jumps]) / prev[jumps]))
    return JumpStats(count / years, amp)


def view_bias(true_values: np.ndarray, view_values: np.ndarray) -> float:
    """Mean of ``|T - B| / T`` over the series."""
    return float(np.mean(np.abs(true_values - view_values) / true_values))
