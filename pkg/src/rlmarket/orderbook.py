"""Single-step double auction: price-priority matching at mid-price, and
settlement of the resulting trades against agent portfolios."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

from .trading import LimitOrder


class ClearingError(RuntimeError):
    pass


@dataclass(slots=True)
class Trade:
    buyer: int
    seller: int
    stock: int
    price: float
    quantity: int
    # position of the matched orders in the submitted lists
    bid_ref: int = -1
    ask_ref: int = -1


@dataclass
class OrderBookFrame:
    bids: List[LimitOrder]
    asks: List[LimitOrder]
    trades: List[Trade] = field(default_factory=list)
    next_price: float = 0.0
    next_volume: int = 0
    next_spread: float = 0.0


def book_spread(bids: Sequence[LimitOrder], asks: Sequence[LimitOrder]) -> float:
    """|mean bid price - mean ask price| over all submitted orders."""
    if not bids or not asks:
        return 0.0
    mb = sum(o.price for o in bids) / len(bids)
    ma = sum(o.price for o in asks) / len(asks)
    return abs(mb - ma)


def _affordable(cash: float, unit_cost: float) -> int:
    if cash <= 0.0:
        return 0
    n = int(cash // unit_cost)
    while n > 0 and n * unit_cost > cash:
        n -= 1
    return n


def clear(bids: Sequence[LimitOrder], asks: Sequence[LimitOrder], prev_price: float,
          fee: float = 0.0, budget: Optional[Dict[int, float]] = None) -> OrderBookFrame:
    """Match crossing levels from the top of the book down.

    Equal prices keep submission order. With ``budget`` (agent -> cash),
    a bid is clipped to what its owner can still pay including ``fee``,
    and the budget is drawn down as trades execute.
    """
    bid_idx = sorted(range(len(bids)), key=lambda k: -bids[k].price)
    ask_idx = sorted(range(len(asks)), key=lambda k: asks[k].price)
    trades: List[Trade] = []
    i = j = 0
    bid_left = bids[bid_idx[0]].quantity if bid_idx else 0
    ask_left = asks[ask_idx[0]].quantity if ask_idx else 0
    last_mid = None
    while i < len(bid_idx) and j < len(ask_idx):
        b, a = bids[bid_idx[i]], asks[ask_idx[j]]
        if b.price < a.price:
            break
        mid = 0.5 * (b.price + a.price)
        q = min(bid_left, ask_left)
        exhausted_bid = q == bid_left
        if budget is not None:
            unit = mid * (1.0 + fee)
            afford = _affordable(budget.get(b.agent, 0.0), unit)
            if afford <= q:
                q = afford
                exhausted_bid = True
            if q > 0:
                budget[b.agent] -= q * unit
        if q > 0:
            trades.append(Trade(b.agent, a.agent, a.stock, mid, q, bid_idx[i], ask_idx[j]))
            last_mid = mid
            ask_left -= q
            bid_left -= q
        if exhausted_bid:
            i += 1
            if i < len(bid_idx):
                bid_left = bids[bid_idx[i]].quantity
        if ask_left == 0:
            j += 1
            if j < len(ask_idx):
                ask_left = asks[ask_idx[j]].quantity
    if i < len(bid_idx) and j < len(ask_idx):
        # nothing below the stopping level may still cross
        if bids[bid_idx[i]].price >= asks[ask_idx[j]].price:
            raise ClearingError("crossing level left unmatched")
    frame = OrderBookFrame(bids=[bids[k] for k in bid_idx], asks=[asks[k] for k in ask_idx])
    frame.trades = trades
    frame.next_price = prev_price if last_mid is None else last_mid
    frame.next_volume = sum(tr.quantity for tr in trades)
    frame.next_spread = book_spread(bids, asks)
    return frame


def settle(trades: Sequence[Trade], agents: Sequence, fee: float, t: int) -> tuple[List[Trade], float]:
    """Move cash and shares for each trade; returns executed trades and total fees.

    A buyer short of cash has the trade clipped to what it can pay; sellers
    must hold the shares they sell.
    """
    executed: List[Trade] = []
    fees = 0.0
    for tr in trades:
        buyer, seller = agents[tr.buyer], agents[tr.seller]
        j = tr.stock
        unit = tr.price * (1.0 + fee)
        q = tr.quantity
        if q * unit > buyer.bonds:
            q = _affordable(buyer.bonds, unit)
        if q <= 0:
            continue
        if seller.holdings[j] < q:
            raise ClearingError(
                f"agent {tr.seller} sells {q} of stock {j} holding {seller.holdings[j]}"
            )
        paid = q * unit
        received = q * tr.price * (1.0 - fee)
        buyer.bonds -= paid
        seller.bonds += received
        fees += paid - received
        buyer.holdings[j] += q
        seller.holdings[j] -= q
        bmem, smem = buyer.stocks[j], seller.stocks[j]
        bmem.elapsed = 0
        smem.elapsed = 0
        bmem.positions.append([q, tr.price, t])
        smem.consume_positions(q)
        if q != tr.quantity:
            tr = Trade(tr.buyer, tr.seller, j, tr.price, q, tr.bid_ref, tr.ask_ref)
        executed.append(tr)
    return executed, fees
