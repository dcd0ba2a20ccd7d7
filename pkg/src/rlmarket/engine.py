"""Per-step market loop, single runs and seeded batches."""

from __future__ import annotations

import logging
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from .agents import Agent, accrue, check_bankruptcy, init_agents, net_asset_value
from .core import (
    STREAM_FUNDAMENTAL,
    STREAM_VIEW,
    T_Y,
    SimConfig,
    make_generator,
    validate_config,
)
from .forecast import (
    HINDSIGHT_REWARD,
    PriceHistory,
    best_action_hindsight_f,
    encode_state_f,
    forecast_at,
    forecast_error,
    reward_from_percentile,
)
from .fundamentals import FundamentalSeries, approximate_fundamental, generate_fundamental
from .orderbook import clear, settle
from .trading import (
    ASK,
    BID,
    LimitOrder,
    TradeContext,
    action_to_order,
    best_action_hindsight_t,
    cashflow,
    direction_state,
    encode_state_t,
    gate_passes,
    health_state,
    order_prices,
    reward_t,
    volatility_state,
    volume_state,
)

log = logging.getLogger(__name__)

INITIAL_PRICE = 100.0

# hook(kind, payload, chosen_action) called on every hindsight evaluation
HindsightHook = Callable[[str, dict, int], None]


class SimulationError(RuntimeError):
    pass


class _Record:
    """One agent's decisions for one stock at one step, settled τ steps later."""

    __slots__ = ("t", "s_f", "a_f", "forecast", "s_t", "a_t", "ctx", "qty", "value")

    def __init__(self, t, s_f, a_f, forecast, s_t, a_t, ctx):
        self.t = t
        self.s_f = s_f
        self.a_f = a_f
        self.forecast = forecast
        self.s_t = s_t
        self.a_t = a_t
        self.ctx = ctx
        self.qty = 0
        self.value = 0.0


@dataclass
class RunResult:
    config: SimConfig
    seed: int
    prices: np.ndarray  # (J, T)
    volumes: np.ndarray  # (J, T)
    spreads: np.ndarray  # (J, T)
    fundamentals: np.ndarray  # (J, T)
    nav: np.ndarray  # (T, I)
    bankruptcies: List[tuple]
    agent_params: List[dict]
    final_bonds: np.ndarray
    final_holdings: np.ndarray  # (I, J)
    ledger: dict = field(default_factory=dict)
    hindsight_calls: int = 0
    forecast_trace: List[tuple] = field(default_factory=list)
    trade_trace: List[tuple] = field(default_factory=list)
    book_rows: List[tuple] = field(default_factory=list)

    @property
    def annual_returns(self) -> np.ndarray:
        """(I, years) returns over calendar-aligned years."""
        ends = np.arange(T_Y, self.nav.shape[0], T_Y)
        if len(ends) == 0:
            return np.empty((self.nav.shape[1], 0))
        start = self.nav[ends - T_Y]
        with np.errstate(divide="ignore", invalid="ignore"):
            return (self.nav[ends] / start - 1.0).T


class World:
    """Mutable market state of one run.

    Agents, fundamentals and views may be injected (tests build small
    hand-made worlds); otherwise they are drawn from the config's seed.
    """

    def __init__(self, cfg: SimConfig, agents: Optional[List[Agent]] = None,
                 fundamentals: Optional[np.ndarray] = None,
                 views: Optional[np.ndarray] = None,
                 hindsight_hook: Optional[HindsightHook] = None,
                 trace: bool = False, book_snapshots: bool = False):
        self.cfg = cfg
        n_steps, n_stocks = cfg.step_count, cfg.stock_count
        seed = cfg.master_seed
        if fundamentals is None:
            fundamentals = np.array([
                generate_fundamental(n_steps, cfg.fundamental_amplitude,
                                     make_generator(seed, STREAM_FUNDAMENTAL, j)).values
                for j in range(n_stocks)
            ])
        self.fundamentals = fundamentals
        init_prices = [INITIAL_PRICE] * n_stocks
        self.agents = agents if agents is not None else init_agents(cfg, init_prices)
        if views is None:
            views = np.empty((len(self.agents), n_stocks, n_steps))
            for a in self.agents:
                for j in range(n_stocks):
                    f = FundamentalSeries(fundamentals[j], np.empty(0, int), cfg.fundamental_amplitude)
                    views[a.index, j] = approximate_fundamental(
                        f, make_generator(seed, STREAM_VIEW, a.index, j)).values
        self.views = views
        self._views = [[list(views[a.index, j]) for j in range(n_stocks)] for a in self.agents]
        self.histories = [PriceHistory([INITIAL_PRICE]) for _ in range(n_stocks)]
        self.volumes = [[0] for _ in range(n_stocks)]
        self.spreads = [[0.0] for _ in range(n_stocks)]
        self.nav = np.empty((n_steps, len(self.agents)))
        for a in self.agents:
            self.nav[0, a.index] = net_asset_value(a, init_prices)
        self.bankruptcies: List[tuple] = []
        steps = n_steps - 1
        self.ledger = {
            "bonds_before": np.zeros(steps),
            "interest": np.zeros(steps),
            "dividends": np.zeros(steps),
            "fees": np.zeros(steps),
            "bonds_after": np.zeros(steps),
            "shares": np.zeros((n_stocks, n_steps), dtype=np.int64),
        }
        self.ledger["shares"][:, 0] = [sum(a.holdings[j] for a in self.agents) for j in range(n_stocks)]
        self.hindsight_hook = hindsight_hook
        self.hindsight_calls = 0
        self.trace = trace
        self.forecast_trace: List[tuple] = []
        self.trade_trace: List[tuple] = []
        self.book_snapshots = book_snapshots
        self.book_rows: List[tuple] = []
        self.t = 0

    # -- per-agent decision -------------------------------------------------

    def _decide(self, a: Agent, j: int, t: int, bids: list, asks: list, prices_t: list) -> None:
        cfg = self.cfg
        mem = a.stocks[j]
        hist = self.histories[j]
        mem.elapsed += 1
        p = prices_t[j]
        fundamental = self._views[a.index][j][t]
        gap_cum = mem.gap_cumsum
        gap_cum.append(gap_cum[-1] + abs(p - fundamental) / p)
        tau = a.horizon
        p_long = mem.sigma_long.push_rank(hist.trailing_variance(3 * tau))
        p_short = mem.sigma_short.push_rank(hist.trailing_variance(tau))
        volume = self.volumes[j][t]
        p_volume = mem.volumes.push_rank(volume)
        if t < a.warmup:
            return
        if mem.first_active < 0:
            mem.first_active = t

        mean_gap = (gap_cum[t + 1] - gap_cum[t - 3 * tau]) / (3 * tau + 1)
        s_f = encode_state_f(p_long, p_short, mean_gap)
        u = a.f_stream.next()
        a_f = int(u * 27) if cfg.noise_agent_mode else a.policy_f.sample(s_f, u)
        h = forecast_at(hist, t, fundamental, a.reflexivity, tau, a_f)

        mu = (h - p) / p
        p_mu = mem.mu_neg.push_rank(mu) if mu < 0.0 else mem.mu_pos.push_rank(mu)
        equity = 0.0
        for q, pj in zip(a.holdings, prices_t):
            equity += q * pj
        s_t = encode_state_t(
            direction_state(mu, p_mu),
            volatility_state(p_long),
            health_state(a.bonds, a.bonds0),
            health_state(equity, a.equity0),
            volume_state(volume, p_volume),
        )
        u = a.t_stream.next()
        a_t = int(u * 9) if cfg.noise_agent_mode else a.policy_t.sample(s_t, u)
        spread = min(self.spreads[j][t], cfg.spread_cap * p)
        ctx = TradeContext(h, p, spread, a.gesture, a.holdings[j], a.bonds, cfg.stock_count)
        order = action_to_order(a.index, j, a_t, ctx)

        passes = gate_passes(mem.gate.push_rank(a.q_table.row_max(s_t)), mem.elapsed, a.trade_window)
        due = 0
        for pos in mem.positions:
            if pos[2] + tau <= t:
                due += pos[0]
        due = min(due, a.holdings[j])
        sent = None
        if order is not None and order.side == ASK:
            sent = order
            asks.append(order)
        elif due > 0:
            ask = order_prices(h, p, spread, a.gesture, 1)[1]
            sent = LimitOrder(a.index, j, ASK, ask, due, from_policy=False)
            asks.append(sent)
        elif order is not None and passes:
            sent = order
            bids.append(order)
        mem.records.append(_Record(t, s_f, a_f, h, s_t, a_t, ctx))
        if self.trace:
            self.forecast_trace.append((t, a.index, j, s_f, a_f, h))
            self.trade_trace.append((
                t, a.index, j, s_t, a_t,
                "" if sent is None else ("bid" if sent.side == BID else "ask"),
                "" if sent is None else sent.price,
                0 if sent is None else sent.quantity,
                int(passes),
            ))

    # -- per-agent learning -------------------------------------------------

    def _learn(self, a: Agent, j: int, t: int) -> None:
        cfg = self.cfg
        mem = a.stocks[j]
        records = mem.records
        due_t = t + 1 - a.horizon
        while records and records[0].t < due_t:
            records.popleft()
        if not records or records[0].t != due_t:
            return
        rec = records.popleft()
        hist = self.histories[j]
        p_now = hist.prices[t + 1]
        learning = not cfg.noise_agent_mode

        r_f = reward_from_percentile(mem.errors.push_rank(forecast_error(rec.forecast, p_now)))
        if learning:
            a.policy_f.update(rec.s_f, rec.a_f, r_f, a.beta)
        r_t = None
        if rec.qty != 0:
            cash = cashflow(rec.qty, rec.value / abs(rec.qty), p_now)
            r_t = reward_t(mem.cashflows.push_rank(cash), cfg.literal_trade_reward)
            if learning:
                a.policy_t.update(rec.s_t, rec.a_t, r_t, a.beta)
                a.q_table.update(rec.s_t, rec.a_t, cash)
        if self.trace:
            self.forecast_trace.append((t + 1, a.index, j, rec.s_f, rec.a_f, "", r_f))
            if r_t is not None:
                self.trade_trace.append((t + 1, a.index, j, rec.s_t, rec.a_t, "", "", rec.qty, "", r_t))

        if learning and (t - mem.first_active) % a.cadence == 0:
            fundamental = self._views[a.index][j][rec.t]
            best_f = best_action_hindsight_f(hist, rec.t, fundamental, a.reflexivity, a.horizon, p_now)
            a.policy_f.update(rec.s_f, best_f, HINDSIGHT_REWARD, a.beta)
            best_t = best_action_hindsight_t(rec.ctx, p_now)
            a.policy_t.update(rec.s_t, best_t, HINDSIGHT_REWARD, a.beta)
            self.hindsight_calls += 1
            if self.hindsight_hook is not None:
                self.hindsight_hook("F", {
                    "prices": hist.prices[: rec.t + 1], "t": rec.t, "fundamental": fundamental,
                    "reflexivity": a.reflexivity, "horizon": a.horizon, "price_now": p_now,
                }, best_f)
                self.hindsight_hook("T", {"context": rec.ctx, "price_now": p_now}, best_t)

    # -- the step -----------------------------------------------------------

    def step(self, t: int) -> None:
        cfg = self.cfg
        if t >= cfg.step_count - 1:
            raise SimulationError(f"step {t} beyond horizon {cfg.step_count}")
        agents = self.agents
        n_stocks = cfg.stock_count
        prices_t = [h.prices[t] for h in self.histories]
        led = self.ledger

        led["bonds_before"][t] = sum(a.bonds for a in agents)
        interest = dividends = 0.0
        for a in agents:
            if not a.bankrupt:
                i_, d_ = accrue(a, prices_t, cfg)
                interest += i_
                dividends += d_
        led["interest"][t] = interest
        led["dividends"][t] = dividends

        bids = [[] for _ in range(n_stocks)]
        asks = [[] for _ in range(n_stocks)]
        for a in agents:
            if a.bankrupt:
                continue
            for j in range(n_stocks):
                try:
                    self._decide(a, j, t, bids[j], asks[j], prices_t)
                except Exception as exc:
                    raise SimulationError(
                        f"seed={cfg.master_seed} t={t} agent={a.index}: {exc}") from exc

        fees = 0.0
        for j in range(n_stocks):
            budget = {o.agent: agents[o.agent].bonds for o in bids[j]}
            frame = clear(bids[j], asks[j], prices_t[j], cfg.broker_fee, budget)
            executed, f = settle(frame.trades, agents, cfg.broker_fee, t)
            fees += f
            for tr in executed:
                self._attribute(agents[tr.buyer], j, t, tr.quantity, tr.price)
                if asks[j][tr.ask_ref].from_policy:
                    self._attribute(agents[tr.seller], j, t, -tr.quantity, tr.price)
            if self.book_snapshots:
                for side, orders in (("bid", frame.bids), ("ask", frame.asks)):
                    for level, o in enumerate(orders):
                        self.book_rows.append((t, j, side, level, o.price, o.quantity))
            self.histories[j].append(frame.next_price)
            self.volumes[j].append(sum(tr.quantity for tr in executed))
            self.spreads[j].append(frame.next_spread)
        led["fees"][t] = fees

        for a in agents:
            if a.bankrupt:
                continue
            for j in range(n_stocks):
                self._learn(a, j, t)

        t1 = t + 1
        prices_next = [h.prices[t1] for h in self.histories]
        new_year = t1 % T_Y == 0
        for a in agents:
            if a.bankrupt:
                self.nav[t1, a.index] = self.nav[t, a.index]
                continue
            nav = net_asset_value(a, prices_next)
            if new_year:
                a.year_peak = nav
            elif nav > a.year_peak:
                a.year_peak = nav
            if check_bankruptcy(a, nav):
                a.bankrupt_at = t1
                self.bankruptcies.append((a.index, t1))
            self.nav[t1, a.index] = nav
        led["bonds_after"][t] = sum(a.bonds for a in agents)
        for j in range(n_stocks):
            led["shares"][j, t1] = sum(a.holdings[j] for a in agents)
        self.t = t1

    @staticmethod
    def _attribute(agent: Agent, j: int, t: int, signed_qty: int, price: float) -> None:
        records = agent.stocks[j].records
        if records and records[-1].t == t:
            rec = records[-1]
            rec.qty += signed_qty
            rec.value += abs(signed_qty) * price

    def run(self) -> "RunResult":
        for t in range(self.t, self.cfg.step_count - 1):
            self.step(t)
        return self.result()

    def result(self) -> RunResult:
        return RunResult(
            config=self.cfg,
            seed=self.cfg.master_seed,
            prices=np.array([h.prices for h in self.histories]),
            volumes=np.array(self.volumes, dtype=np.int64),
            spreads=np.array(self.spreads),
            fundamentals=np.asarray(self.fundamentals),
            nav=self.nav[: self.t + 1].copy(),
            bankruptcies=list(self.bankruptcies),
            agent_params=[a.params() for a in self.agents],
            final_bonds=np.array([a.bonds for a in self.agents]),
            final_holdings=np.array([a.holdings for a in self.agents], dtype=np.int64),
            ledger={k: v.copy() for k, v in self.ledger.items()},
            hindsight_calls=self.hindsight_calls,
            forecast_trace=list(self.forecast_trace),
            trade_trace=list(self.trade_trace),
            book_rows=list(self.book_rows),
        )


def run(cfg: SimConfig, seed: Optional[int] = None, **world_kwargs) -> RunResult:
    """Validate ``cfg`` and simulate one market; ``seed`` overrides master_seed."""
    if seed is not None:
        cfg = cfg.with_(master_seed=seed)
    validate_config(cfg)
    return World(cfg, **world_kwargs).run()


@dataclass
class RunFailure:
    seed: int
    error: str


def _run_one(args) -> RunResult | RunFailure:
    cfg, seed = args
    try:
        return run(cfg, seed)
    except Exception:
        return RunFailure(seed, traceback.format_exc())


def run_batch(cfg: SimConfig, seeds: Sequence[int], workers: int = 1) -> List[RunResult | RunFailure]:
    """Independent runs, one per seed, returned in seed-list order.

    A failing seed yields a :class:`RunFailure` in its slot; siblings
    are unaffected.
    """
    if len(set(seeds)) != len(seeds):
        raise ValueError("batch seeds must be distinct")
    jobs = [(cfg, s) for s in seeds]
    if workers <= 1:
        results = []
        for job in jobs:
            log.info("run seed=%d", job[1])
            results.append(_run_one(job))
        return results
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_one, jobs))
