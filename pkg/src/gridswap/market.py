"""Uniform-price double auction for one trading slot.

Buy and sell limit orders for the same 15-minute slot are matched by merit
order: highest bids are served first from the cheapest asks, quantities may
split. All matched energy trades at one clearing price; whatever does not
clear falls back to the grid tariff at settlement.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import InputError

BUY = "buy"
SELL = "sell"


@dataclass(frozen=True)
class Tariff:
    """Grid prices in $/kWh: export at p_wp, import at p_rp."""

    p_wp: float
    p_rp: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.p_wp) and math.isfinite(self.p_rp)):
            raise InputError("tariff prices must be finite")
        if self.p_wp < 0:
            raise InputError(f"wholesale price must be >= 0, got {self.p_wp}")
        if not self.p_rp > self.p_wp:
            raise InputError(
                f"retail price must exceed wholesale price, got p_rp={self.p_rp} <= p_wp={self.p_wp}"
            )


@dataclass(frozen=True)
class Order:
    """A limit order: `quantity` kWh at up to / at least `limit_price` $/kWh."""

    agent_id: str
    side: str
    quantity: float
    limit_price: float
    slot: int = 0

    def __post_init__(self) -> None:
        if self.side not in (BUY, SELL):
            raise InputError(f"order side must be 'buy' or 'sell', got {self.side!r}")
        if not (math.isfinite(self.quantity) and self.quantity > 0):
            raise InputError(f"order quantity must be > 0, got {self.quantity}")
        if not (math.isfinite(self.limit_price) and self.limit_price >= 0):
            raise InputError(f"limit price must be finite and >= 0, got {self.limit_price}")


@dataclass(frozen=True)
class Match:
    buyer_id: str
    seller_id: str
    quantity: float


@dataclass
class SlotClearing:
    """Result of clearing one slot's order book."""

    clearing_price: float | None
    matches: list[Match]
    residual_buys: dict[str, float]
    residual_sells: dict[str, float]
    matched_volume: float = 0.0
    # limit prices of the marginal allocated bid/ask, kept for midpoint pricing
    marginal_bid: float | None = None
    marginal_ask: float | None = None


@dataclass
class Settlement:
    """Per-agent cash flows for one cleared slot, all in $."""

    p2p_paid: dict[str, float] = field(default_factory=dict)
    p2p_received: dict[str, float] = field(default_factory=dict)
    grid_charge: dict[str, float] = field(default_factory=dict)
    grid_credit: dict[str, float] = field(default_factory=dict)

    def total_paid(self) -> float:
        return sum(self.p2p_paid.values())

    def total_received(self) -> float:
        return sum(self.p2p_received.values())


def _check_book(buys: list[Order], sells: list[Order]) -> None:
    slots = {o.slot for o in buys} | {o.slot for o in sells}
    if len(slots) > 1:
        raise InputError(f"orders span multiple slots: {sorted(slots)}")
    for o in buys:
        if o.side != BUY:
            raise InputError(f"sell order {o.agent_id!r} passed in the buy list")
    for o in sells:
        if o.side != SELL:
            raise InputError(f"buy order {o.agent_id!r} passed in the sell list")


def clear_double_auction(
    buys: list[Order],
    sells: list[Order],
    pricing: str = "marginal_bid",
) -> SlotClearing:
    """Clear one slot's closed order book by merit-order dispatch.

    Bids are served from the highest price down, asks from the lowest up,
    splitting quantities until the best remaining bid no longer covers the
    best remaining ask. The uniform clearing price is the limit price of the
    lowest-priced bid that received any allocation; `pricing="midpoint"`
    instead averages the marginal allocated bid and ask (sensitivity runs).

    Ties on price break by agent id, then submission index, so the result is
    invariant to shuffling the input lists.
    """
    if pricing not in ("marginal_bid", "midpoint"):
        raise InputError(f"unknown pricing rule {pricing!r}")
    _check_book(buys, sells)

    bids = sorted(
        ((o, k) for k, o in enumerate(buys)),
        key=lambda ok: (-ok[0].limit_price, ok[0].agent_id, ok[1]),
    )
    asks = sorted(
        ((o, k) for k, o in enumerate(sells)),
        key=lambda ok: (ok[0].limit_price, ok[0].agent_id, ok[1]),
    )

    remaining_bid = [o.quantity for o, _ in bids]
    remaining_ask = [o.quantity for o, _ in asks]
    matches: list[Match] = []
    marginal_bid: float | None = None
    marginal_ask: float | None = None
    volume = 0.0

    i = j = 0
    while i < len(bids) and j < len(asks):
        buy, ask = bids[i][0], asks[j][0]
        if buy.limit_price < ask.limit_price:
            break
        qty = min(remaining_bid[i], remaining_ask[j])
        matches.append(Match(buy.agent_id, ask.agent_id, qty))
        marginal_bid = buy.limit_price
        marginal_ask = ask.limit_price
        volume += qty
        remaining_bid[i] -= qty
        remaining_ask[j] -= qty
        if remaining_bid[i] <= 0:
            i += 1
        if remaining_ask[j] <= 0:
            j += 1

    if not matches:
        price: float | None = None
    elif pricing == "marginal_bid":
        price = marginal_bid
    else:
        price = (marginal_bid + marginal_ask) / 2.0

    residual_buys: dict[str, float] = {}
    residual_sells: dict[str, float] = {}
    for (o, _), rem in zip(bids, remaining_bid):
        if rem > 0:
            residual_buys[o.agent_id] = residual_buys.get(o.agent_id, 0.0) + rem
    for (o, _), rem in zip(asks, remaining_ask):
        if rem > 0:
            residual_sells[o.agent_id] = residual_sells.get(o.agent_id, 0.0) + rem

    return SlotClearing(
        clearing_price=price,
        matches=matches,
        residual_buys=residual_buys,
        residual_sells=residual_sells,
        matched_volume=volume,
        marginal_bid=marginal_bid,
        marginal_ask=marginal_ask,
    )


def settle_slot(clearing: SlotClearing, tariff: Tariff) -> Settlement:
    """Settle a cleared slot: matched energy at the clearing price, residual
    buys from the grid at p_rp, residual sells to the grid at p_wp."""
    s = Settlement()
    price = clearing.clearing_price
    for m in clearing.matches:
        cash = m.quantity * price
        s.p2p_paid[m.buyer_id] = s.p2p_paid.get(m.buyer_id, 0.0) + cash
        s.p2p_received[m.seller_id] = s.p2p_received.get(m.seller_id, 0.0) + cash
    for agent, qty in clearing.residual_buys.items():
        s.grid_charge[agent] = s.grid_charge.get(agent, 0.0) + qty * tariff.p_rp
    for agent, qty in clearing.residual_sells.items():
        s.grid_credit[agent] = s.grid_credit.get(agent, 0.0) + qty * tariff.p_wp
    return s
