from dataclasses import dataclass
from typing import List, Tuple
import numpy as np
from gridmarket.config import TOL_ZERO, tol_eq
from gridmarket.model.instance import MarketInstance, Violation, ViolationKind
from gridmarket.model.state import TradeState
from gridmarket.model.objectives import der_revenue, load_expense


@dataclass(frozen=True)
class TradeMask:
    """active[i, j] is True when some admissible price lets DER i and load j both gain by trading."""
    active: np.ndarray

    def pairs(self):
        return [tuple(int(v) for v in p) for p in np.argwhere(self.active)]

    def count(self) -> int:
        return int(self.active.sum())


def compute_trade_mask(inst: MarketInstance) -> TradeMask:
    G, L = inst.num_ders, inst.num_loads
    active = np.zeros((G, L), dtype=bool)
    for i in range(G):
        for j in range(L):
            low, high = inst.price_window(i, j)
            active[i, j] = high > 0 and low <= high
    return TradeMask(active=active)


def check_feasible(inst: MarketInstance, state: TradeState) -> List[Violation]:
    G, L = inst.num_ders, inst.num_loads
    violations = []
    if (state.prices.shape != (G, L) or state.alloc.shape != (G, L + 1)
            or state.dem.shape != (L, G + 1) or state.disc.shape != (L, G)):
        return [Violation(ViolationKind.SHAPE, "state matrices do not match a {}x{} market".format(G, L))]

    for i in range(G):
        tol = tol_eq(inst.surplus[i])
        if np.any(state.alloc[i] < -tol):
            violations.append(Violation(ViolationKind.OFFER, "negative allocation for DER {}".format(i + 1), (i + 1,)))
        if state.alloc[i, 1:].sum() > inst.surplus[i] + tol:
            violations.append(Violation(ViolationKind.OFFER, "offer exceeds surplus for DER {}".format(i + 1), (i + 1,)))
        if abs(state.alloc[i].sum() - inst.surplus[i]) > tol:
            violations.append(Violation(ViolationKind.SLACK, "allocation slack does not reconcile for DER {}".format(i + 1), (i + 1,)))

    for j in range(L):
        tol = tol_eq(inst.demand[j])
        if np.any(state.dem[j] < -tol):
            violations.append(Violation(ViolationKind.DEMAND, "negative demand for load {}".format(j + 1), (j + 1,)))
        if state.dem[j, 1:].sum() > inst.demand[j] + tol:
            violations.append(Violation(ViolationKind.DEMAND, "peer demand exceeds need for load {}".format(j + 1), (j + 1,)))
        if abs(state.dem[j].sum() - inst.demand[j]) > tol:
            violations.append(Violation(ViolationKind.SLACK, "demand slack does not reconcile for load {}".format(j + 1), (j + 1,)))

    for i in range(G):
        for j in range(L):
            p = state.prices[i, j]
            if not 0 < p <= inst.price_cap[i] + tol_eq(inst.price_cap[i]):
                violations.append(Violation(ViolationKind.PRICE, "price cap ({},{})".format(i + 1, j + 1), (i + 1, j + 1)))
            s = state.disc[j, i]
            if s < -tol_eq(p) or s > inst.discount_cap * p + tol_eq(p):
                violations.append(Violation(ViolationKind.DISCOUNT, "discount cap ({},{})".format(i + 1, j + 1), (i + 1, j + 1)))
            if abs(state.alloc[i, j + 1] - state.dem[j, i + 1]) > tol_eq(inst.surplus[i], inst.demand[j]):
                violations.append(Violation(ViolationKind.CONSISTENCY, "consistency ({},{})".format(i + 1, j + 1), (i + 1, j + 1)))

    return violations


def edge_trades(inst: MarketInstance, state: TradeState, tol: float = TOL_ZERO) -> List[Tuple[int, int]]:
    """1-based (DER, load) pairs trading at a price on the window edge, where one side gains nothing."""
    pairs = []
    for i in range(inst.num_ders):
        for j in range(inst.num_loads):
            if state.alloc[i, j + 1] <= tol:
                continue
            p = state.prices[i, j]
            if p <= inst.pcc_buy_price[i] + tol or p - state.disc[j, i] >= inst.pcc_sell_price[j] - tol:
                pairs.append((i + 1, j + 1))
    return pairs


def rationality_check(inst: MarketInstance, state: TradeState, tol: float = TOL_ZERO) -> List[Violation]:
    """
    No agent may be worse off than trading with the PCC alone.

    Deviation: a trade is rational when p > gamma and p - s < pi strictly. Both
    are checked weakly here, within `tol`, so a trade on the window edge passes.
    edge_trades() lists those pairs.
    """
    mask = compute_trade_mask(inst).active
    violations = []
    for i in range(inst.num_ders):
        for j in range(inst.num_loads):
            h = state.alloc[i, j + 1]
            if h <= tol:
                continue
            if not mask[i, j]:
                violations.append(Violation(
                    ViolationKind.INACTIVE_TRADE, "trade on inactive pair ({},{})".format(i + 1, j + 1), (i + 1, j + 1)))
            p = state.prices[i, j]
            if p < inst.pcc_buy_price[i] - tol:
                violations.append(Violation(
                    ViolationKind.RATIONALITY, "price below pcc buy price at ({},{})".format(i + 1, j + 1), (i + 1, j + 1)))
            if p - state.disc[j, i] > inst.pcc_sell_price[j] + tol:
                violations.append(Violation(
                    ViolationKind.RATIONALITY,
                    "discounted price above pcc sell price at ({},{})".format(i + 1, j + 1), (i + 1, j + 1)))

    for i in range(inst.num_ders):
        baseline = inst.surplus[i] * inst.pcc_buy_price[i]
        if der_revenue(inst, state, i) < baseline - tol * max(baseline, 1.0):
            violations.append(Violation(ViolationKind.RATIONALITY, "DER {} earns less than selling to the PCC".format(i + 1), (i + 1,)))
    for j in range(inst.num_loads):
        baseline = inst.demand[j] * inst.pcc_sell_price[j]
        if load_expense(inst, state, j) > baseline + tol * max(baseline, 1.0):
            violations.append(Violation(ViolationKind.RATIONALITY, "load {} pays more than buying from the PCC".format(j + 1), (j + 1,)))
    return violations
