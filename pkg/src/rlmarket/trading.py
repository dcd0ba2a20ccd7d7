"""Trading algorithm: 108 states, 9 limit-order actions, the timing gate and
cashflow rewards."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

from .forecast import ERROR_REWARDS, reward_from_percentile

BID, ASK = 0, 1
SELL, HOLD, BUY = 0, 1, 2

# percentile cut-offs for the forecast direction and long volatility components
MU_NEG_STABLE = 0.95
MU_POS_STABLE = 0.05
VOL_LOW, VOL_HIGH = 0.33, 0.67
HEALTH_RATIO = 0.60
VOLUME_LOW = 0.33

MIN_PRICE = 0.01

CASHFLOW_REWARDS = tuple(reversed(ERROR_REWARDS))


@dataclass(slots=True)
class LimitOrder:
    agent: int
    stock: int
    side: int
    price: float
    quantity: int
    # False for horizon exits, which carry no trading reward
    from_policy: bool = True


class TradeContext(NamedTuple):
    """Inputs of one trading decision, kept for hindsight evaluation."""

    forecast: float
    price: float
    spread: float
    gesture: float
    holdings: int
    bonds: float
    stock_count: int


def encode_state_t(s0: int, s1: int, s2: int, s3: int, s4: int) -> int:
    return (((s0 * 3 + s1) * 2 + s2) * 2 + s3) * 3 + s4


def decode_state_t(index: int) -> tuple[int, int, int, int, int]:
    s4 = index % 3
    index //= 3
    s3 = index % 2
    index //= 2
    s2 = index % 2
    index //= 2
    return index // 3, index % 3, s2, s3, s4


def direction_state(mu: float, pct: float) -> int:
    """``pct`` is the rank of ``mu`` in the window matching its sign."""
    if mu < 0.0:
        return 0 if pct < MU_NEG_STABLE else 1
    return 1 if pct < MU_POS_STABLE else 2


def volatility_state(pct: float) -> int:
    if pct < VOL_LOW:
        return 0
    if pct > VOL_HIGH:
        return 2
    return 1


def health_state(value: float, start: float) -> int:
    return 0 if value < HEALTH_RATIO * start else 1


def volume_state(volume: float, pct: float) -> int:
    if volume == 0:
        return 0
    return 1 if pct < VOLUME_LOW else 2


def order_prices(forecast: float, price: float, spread: float, gesture: float,
                 a1: int) -> tuple[float, float]:
    """Bid and ask for price stance ``a1`` (0 soft, 1 neutral, 2 hard)."""
    lo, hi = min(forecast, price), max(forecast, price)
    shift = gesture * spread * (1 - a1)
    return max(lo + shift, MIN_PRICE), max(hi - shift, MIN_PRICE)


def action_to_order(agent: int, stock: int, action: int, ctx: TradeContext) -> Optional[LimitOrder]:
    """Limit order for trading action ``action = 3*a0 + a1``, or None to hold."""
    a0, a1 = divmod(action, 3)
    if a0 == HOLD or not math.isfinite(ctx.forecast):
        return None
    bid, ask = order_prices(ctx.forecast, ctx.price, ctx.spread, ctx.gesture, a1)
    if a0 == SELL:
        if ctx.holdings <= 0:
            return None
        return LimitOrder(agent, stock, ASK, ask, ctx.holdings)
    if ctx.bonds <= 0.0:
        return None
    qty = int(ctx.bonds // (ask * ctx.stock_count))
    if qty <= 0:
        return None
    return LimitOrder(agent, stock, BID, bid, qty)


def gate_passes(q_percentile: float, elapsed: int, trade_window: int) -> bool:
    return q_percentile < elapsed / trade_window


def cashflow(quantity: int, trade_price: float, price_now: float) -> float:
    """Gain of a cleared signed quantity (+ bought, - sold) relative to not trading."""
    return quantity * (price_now - trade_price)


def reward_t(pct: float, literal: bool = False) -> int:
    return reward_from_percentile(pct, ERROR_REWARDS if literal else CASHFLOW_REWARDS)


def hypothetical_cashflow(ctx: TradeContext, action: int, price_now: float) -> float:
    """Cashflow of ``action`` had its order cleared in full at its own limit."""
    order = action_to_order(0, 0, action, ctx)
    if order is None:
        return 0.0
    signed = order.quantity if order.side == BID else -order.quantity
    return cashflow(signed, order.price, price_now)


def best_action_hindsight_t(ctx: TradeContext, price_now: float) -> int:
    best, best_cash = 0, -math.inf
    for a in range(9):
        c = hypothetical_cashflow(ctx, a, price_now)
        if c > best_cash:
            best, best_cash = a, c
    return best
