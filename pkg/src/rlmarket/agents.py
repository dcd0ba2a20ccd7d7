"""Investor state: initial parameter draws, portfolio accounting, accrual of
interest and dividends, and drawdown bankruptcy."""

from __future__ import annotations

from collections import deque
from typing import List, Sequence

import numpy as np

from .core import (
    STREAM_AGENT_INIT,
    STREAM_FORECAST,
    STREAM_TRADE,
    T_M,
    T_W,
    T_Y,
    ActionValueTable,
    PolicyTable,
    RollingPercentileWindow,
    SimConfig,
    UniformStream,
    make_generator,
)

F_STATES = F_ACTIONS = 27
T_STATES, T_ACTIONS = 108, 9

BONDS_SCALE = 1.0e4
HOLDINGS_SCALE = 100.0
LIMIT_FLOOR, LIMIT_CEIL = 0.01, 0.99


def forecast_interval(a1: int, horizon: int) -> int:
    """Look-back length ``(1 + a1) * horizon / 2`` rounded half up, at least 1."""
    return max(1, int((1 + a1) * horizon / 2.0 + 0.5))


class StockMemory:
    """Per (agent, stock) rolling memories and bookkeeping."""

    __slots__ = (
        "sigma_long", "sigma_short", "errors", "mu_neg", "mu_pos", "volumes",
        "gate", "cashflows", "elapsed", "positions", "gap_cumsum", "records",
        "first_active",
    )

    def __init__(self, memory: int):
        w = RollingPercentileWindow
        self.sigma_long = w(memory)
        self.sigma_short = w(memory)
        self.errors = w(memory)
        self.mu_neg = w(memory)
        self.mu_pos = w(memory)
        self.volumes = w(memory)
        self.gate = w(memory)
        self.cashflows = w(memory)
        self.elapsed = 0
        # open long positions awaiting horizon exit: [qty, price, entry_t]
        self.positions: deque = deque()
        # running sum of |P - B| / P, index t+1 holds the sum over [0, t]
        self.gap_cumsum: List[float] = [0.0]
        # per-step decision records awaiting their horizon
        self.records: deque = deque()
        self.first_active = -1

    def open_quantity(self) -> int:
        return sum(p[0] for p in self.positions)

    def consume_positions(self, qty: int) -> None:
        """Close ``qty`` shares of open positions, oldest first."""
        while qty > 0 and self.positions:
            head = self.positions[0]
            if head[0] <= qty:
                qty -= head[0]
                self.positions.popleft()
            else:
                head[0] -= qty
                qty = 0


class Agent:
    __slots__ = (
        "index", "bonds", "bonds0", "holdings", "equity0", "drawdown_limit",
        "reflexivity", "horizon", "trade_window", "memory", "gesture", "beta",
        "year_peak", "bankrupt", "bankrupt_at", "policy_f", "policy_t",
        "q_table", "f_stream", "t_stream", "stocks", "warmup", "cadence",
    )

    def __init__(self, index: int, bonds: float, holdings: Sequence[int], drawdown_limit: float,
                 reflexivity: float, horizon: int, trade_window: int, memory: int,
                 gesture: float, beta: float):
        self.index = index
        self.bonds = float(bonds)
        self.bonds0 = float(bonds)
        self.holdings = [int(q) for q in holdings]
        self.equity0 = 0.0
        self.drawdown_limit = drawdown_limit
        self.reflexivity = reflexivity
        self.horizon = horizon
        self.trade_window = trade_window
        self.memory = memory
        self.gesture = gesture
        self.beta = beta
        self.year_peak = 0.0
        self.bankrupt = False
        self.bankrupt_at = -1
        self.policy_f = PolicyTable(F_STATES, F_ACTIONS)
        self.policy_t = PolicyTable(T_STATES, T_ACTIONS)
        self.q_table = ActionValueTable(T_STATES, T_ACTIONS)
        self.f_stream: UniformStream | None = None
        self.t_stream: UniformStream | None = None
        self.stocks = [StockMemory(memory) for _ in self.holdings]
        # earliest step with enough price history for the longest look-back
        self.warmup = max(3 * horizon, 2 * forecast_interval(2, horizon))
        self.cadence = horizon // T_M + 2

    def params(self) -> dict:
        return {
            "bonds0": self.bonds0,
            "drawdown_limit": self.drawdown_limit,
            "reflexivity": self.reflexivity,
            "horizon": self.horizon,
            "trade_window": self.trade_window,
            "memory": self.memory,
            "gesture": self.gesture,
            "beta": self.beta,
        }


def draw_agent(index: int, cfg: SimConfig, rng: np.random.Generator) -> Agent:
    steps, stocks = cfg.step_count, cfg.stock_count
    bonds = abs(rng.normal(0.0, BONDS_SCALE))
    holdings = np.rint(np.abs(rng.normal(0.0, HOLDINGS_SCALE, stocks))).astype(int)
    limit = rng.uniform(0.5, 0.6) + cfg.drawdown_threshold / 100.0
    limit = min(max(limit, LIMIT_FLOOR), LIMIT_CEIL)
    reflexivity = rng.uniform(0.0, 1.0)
    horizon = int(rng.integers(T_W, 6 * T_M, endpoint=True))
    window = int(rng.integers(T_W, horizon, endpoint=True))
    memory = int(rng.integers(T_W, max(T_W, steps - horizon - 2 * T_W), endpoint=True))
    gesture = rng.uniform(0.2, 0.8) * cfg.gesture_scalar
    beta = rng.uniform(0.05, 0.20)
    return Agent(index, bonds, holdings.tolist(), limit, reflexivity, horizon, window,
                 memory, gesture, beta)


def init_agents(cfg: SimConfig, initial_prices: Sequence[float]) -> List[Agent]:
    """Draw every agent from its own init stream and attach its decision streams."""
    seed = cfg.master_seed
    agents = []
    for i in range(cfg.agent_count):
        a = draw_agent(i, cfg, make_generator(seed, STREAM_AGENT_INIT, i))
        a.f_stream = UniformStream(make_generator(seed, STREAM_FORECAST, i))
        a.t_stream = UniformStream(make_generator(seed, STREAM_TRADE, i))
        a.equity0 = sum(q * p for q, p in zip(a.holdings, initial_prices))
        a.year_peak = a.bonds + a.equity0
        agents.append(a)
    return agents


def net_asset_value(agent: Agent, prices: Sequence[float]) -> float:
    nav = agent.bonds
    for q, p in zip(agent.holdings, prices):
        nav += q * p
    return nav


def check_bankruptcy(agent: Agent, nav: float) -> bool:
    """Flag the agent if its drawdown from the year peak exceeds its limit.

    Bankruptcy is absorbing; the caller maintains ``year_peak``.
    """
    if agent.bankrupt:
        return True
    peak = agent.year_peak
    if peak <= 0.0 or (peak - nav) / peak > agent.drawdown_limit:
        agent.bankrupt = True
    return agent.bankrupt


def daily_rate(annual: float) -> float:
    return (1.0 + annual) ** (1.0 / T_Y) - 1.0


def accrue(agent: Agent, prices: Sequence[float], cfg: SimConfig) -> tuple[float, float]:
    """Credit one day of interest and dividends to bonds; returns both amounts."""
    interest = agent.bonds * daily_rate(cfg.annual_risk_free)
    dividends = 0.0
    d = cfg.annual_dividend / T_Y
    for q, p in zip(agent.holdings, prices):
        dividends += q * p * d
    agent.bonds += interest + dividends
    return interest, dividends
