"""Shared primitives: run configuration, calendar, rolling percentile windows,
discrete policy tables and per-purpose random streams."""

from __future__ import annotations

from bisect import bisect_left, insort
from collections import deque
from dataclasses import dataclass, fields, replace
from typing import Iterable, List, Sequence

import numpy as np

T_Y = 252
T_M = 21
T_W = 5

# smallest admissible step count: every horizon tau <= 6*T_M and memory h >= T_W must fit
MIN_STEPS = 6 * T_M + 4 * T_W

# reference amplitude at which the fundamental statistics are calibrated
NU_REF = 0.5


class ConfigError(ValueError):
    """Raised when a configuration violates one or more bounds."""

    def __init__(self, problems: Sequence[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass(frozen=True)
class SimConfig:
    agent_count: int = 500
    stock_count: int = 1
    step_count: int = 2875
    run_count: int = 20
    broker_fee: float = 0.0001
    annual_risk_free: float = 0.01
    annual_dividend: float = 0.02
    gesture_scalar: float = 1.0
    fundamental_amplitude: float = NU_REF
    drawdown_threshold: float = 0.0
    master_seed: int = 0
    noise_agent_mode: bool = False
    # restores the shared error/cashflow reward table for the trading algorithm
    literal_trade_reward: bool = False
    # ceiling on the spread an agent concedes, as a fraction of the market price
    # (math.inf restores the unbounded rule, whose spread feedback can run away)
    spread_cap: float = 0.1

    def with_(self, **changes) -> "SimConfig":
        return replace(self, **changes)

    @classmethod
    def field_names(cls) -> List[str]:
        return [f.name for f in fields(cls)]


def config_problems(cfg: SimConfig) -> List[str]:
    problems = []
    if cfg.agent_count < 1:
        problems.append("agent_count must be ≥ 1")
    if cfg.stock_count < 1:
        problems.append("stock_count must be ≥ 1")
    if cfg.run_count < 1:
        problems.append("run_count must be ≥ 1")
    if cfg.step_count <= MIN_STEPS:
        problems.append(
            f"step_count too small for horizon bounds (must exceed {MIN_STEPS})"
        )
    if not 0.0 <= cfg.broker_fee < 1.0:
        problems.append("broker_fee must lie in [0, 1)")
    if cfg.annual_risk_free <= -1.0:
        problems.append("annual_risk_free must exceed -1")
    if cfg.annual_dividend < 0.0:
        problems.append("annual_dividend must be ≥ 0")
    if cfg.gesture_scalar <= 0.0:
        problems.append("gesture_scalar must be > 0")
    if cfg.fundamental_amplitude < 0.0:
        problems.append("fundamental_amplitude must be ≥ 0")
    if not -100.0 < cfg.drawdown_threshold < 100.0:
        problems.append("drawdown_threshold must lie in (-100, 100) percentage points")
    if not cfg.spread_cap > 0.0:
        problems.append("spread_cap must be > 0")
    if not 0 <= cfg.master_seed < 2**64:
        problems.append("master_seed must be a 64-bit unsigned integer")
    return problems


def validate_config(cfg: SimConfig) -> SimConfig:
    """Return ``cfg`` unchanged, or raise :class:`ConfigError` listing every
    violated bound."""
    problems = config_problems(cfg)
    if problems:
        raise ConfigError(problems)
    return cfg


class RollingPercentileWindow:
    """Sorted multiset of the last ``capacity`` observations.

    Eviction follows arrival order; ranks use the strict convention
    ``#{entries < x} / size``.
    """

    __slots__ = ("capacity", "_sorted", "_arrivals")

    def __init__(self, capacity: int, values: Iterable[float] = ()):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._sorted: List[float] = []
        self._arrivals: deque = deque()
        for v in values:
            self.insert(v)

    def insert(self, x: float) -> None:
        if len(self._arrivals) == self.capacity:
            old = self._arrivals.popleft()
            del self._sorted[bisect_left(self._sorted, old)]
        insort(self._sorted, x)
        self._arrivals.append(x)

    def percentile(self, x: float) -> float:
        n = len(self._sorted)
        if n == 0:
            raise ValueError("no history")
        return bisect_left(self._sorted, x) / n

    def push_rank(self, x: float) -> float:
        """Insert ``x`` then return its percentile within the updated window."""
        srt = self._sorted
        arr = self._arrivals
        if len(arr) == self.capacity:
            del srt[bisect_left(srt, arr.popleft())]
        k = bisect_left(srt, x)
        srt.insert(k, x)
        arr.append(x)
        return k / len(srt)

    @property
    def entries(self) -> List[float]:
        return list(self._sorted)

    @property
    def arrivals(self) -> List[float]:
        return list(self._arrivals)

    def __len__(self) -> int:
        return len(self._sorted)


def window_insert(w: RollingPercentileWindow, x: float) -> RollingPercentileWindow:
    w.insert(x)
    return w


def percentile_of(w: RollingPercentileWindow, x: float) -> float:
    return w.percentile(x)


class PolicyTable:
    """Dense state x action probability table, rows initialised equiprobable.

    ``sample`` consumes exactly one uniform draw per call.
    """

    __slots__ = ("state_count", "action_count", "rows")

    def __init__(self, state_count: int, action_count: int):
        self.state_count = state_count
        self.action_count = action_count
        p = 1.0 / action_count
        self.rows: List[List[float]] = [[p] * action_count for _ in range(state_count)]

    def sample(self, s: int, u: float) -> int:
        acc = 0.0
        row = self.rows[s]
        for a, p in enumerate(row):
            acc += p
            if u < acc:
                return a
        # u landed in the rounding slack above the accumulated mass
        for a in range(len(row) - 1, -1, -1):
            if row[a] > 0.0:
                return a
        return len(row) - 1

    def update(self, s: int, a_star: int, r: int, beta: float) -> None:
        """Apply the reinforcement rule ``|r|`` times.

        r > 0: ``p* += beta(1 - p*)`` and ``p -= beta p`` for the others.
        r < 0: the action is demoted by ``p -= beta p`` and the freed mass is
        shared among the remaining actions in proportion to their weight.
        """
        if r == 0:
            return
        row = self.rows[s]
        c = (1.0 - beta) ** abs(r)
        if r > 0:
            star = row[a_star]
            for a in range(len(row)):
                row[a] *= c
            row[a_star] = 1.0 - c * (1.0 - star)
            return
        old = row[a_star]
        new = old * c
        rest = sum(row) - old
        if rest > 0.0:
            scale = (1.0 - new) / rest
            for a in range(len(row)):
                row[a] *= scale
        else:
            share = (1.0 - new) / (len(row) - 1)
            for a in range(len(row)):
                row[a] = share
        row[a_star] = new

    def as_array(self) -> np.ndarray:
        return np.array(self.rows)


def policy_sample(p: PolicyTable, s: int, stream: "UniformStream") -> int:
    return p.sample(s, stream.next())


def policy_update(p: PolicyTable, s: int, a_star: int, r: int, beta: float) -> PolicyTable:
    p.update(s, a_star, r, beta)
    return p


class ActionValueTable:
    """Running-mean payoff per (state, action); unvisited cells read 0."""

    __slots__ = ("values", "counts", "_row_max")

    def __init__(self, state_count: int, action_count: int):
        self.values = [[0.0] * action_count for _ in range(state_count)]
        self.counts = [[0] * action_count for _ in range(state_count)]
        self._row_max = [0.0] * state_count

    def update(self, s: int, a: int, payoff: float) -> None:
        n = self.counts[s][a] + 1
        self.counts[s][a] = n
        row = self.values[s]
        row[a] += (payoff - row[a]) / n
        self._row_max[s] = max(row)

    def row_max(self, s: int) -> float:
        return self._row_max[s]


def action_value_update(q: ActionValueTable, s: int, a: int, payoff: float) -> ActionValueTable:
    q.update(s, a, payoff)
    return q


# purposes of the per-agent / per-stock random streams
STREAM_AGENT_INIT = 0
STREAM_FORECAST = 1
STREAM_TRADE = 2
STREAM_FUNDAMENTAL = 3
STREAM_VIEW = 4


def make_generator(master_seed: int, *key: int) -> np.random.Generator:
    """Counter-based Philox generator for one (purpose, owner, ...) key."""
    ss = np.random.SeedSequence(master_seed, spawn_key=tuple(key))
    return np.random.Generator(np.random.Philox(ss))


class UniformStream:
    """Buffered U[0,1) draws from a dedicated generator."""

    __slots__ = ("_gen", "_buf", "_i", "_block")

    def __init__(self, gen: np.random.Generator, block: int = 1024):
        self._gen = gen
        self._block = block
        self._buf: List[float] = []
        self._i = 0

    def next(self) -> float:
        i = self._i
        if i == len(self._buf):
            self._buf = self._gen.random(self._block).tolist()
            i = 0
        self._i = i + 1
        return self._buf[i]
