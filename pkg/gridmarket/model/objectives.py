from dataclasses import dataclass
import logging
import numpy as np
from gridmarket.model.instance import MarketInstance
from gridmarket.model.state import TradeState


@dataclass(frozen=True)
class ObjectiveValues:
    der_revenue: np.ndarray
    load_expense: np.ndarray
    pcc_distance: np.ndarray

    def to_dict(self):
        return {
            "der_revenue": self.der_revenue.tolist(),
            "load_expense": self.load_expense.tolist(),
            "pcc_distance": self.pcc_distance.tolist(),
        }


def _check_index(i, count, what):
    if not 0 <= i < count:
        raise IndexError("{} index {} out of range [0, {})".format(what, i, count))


def der_revenue(inst: MarketInstance, state: TradeState, i: int) -> float:
    """Revenue of DER i: peer sales at the proposed prices plus the remainder sold to the PCC."""
    _check_index(i, inst.num_ders, "DER")
    h = state.alloc[i, 1:]
    return float(np.dot(state.prices[i], h) + (inst.surplus[i] - h.sum()) * inst.pcc_buy_price[i])


def load_expense(inst: MarketInstance, state: TradeState, i: int) -> float:
    """Expense of load i: discounted peer purchases plus the PCC-bought remainder."""
    _check_index(i, inst.num_loads, "load")
    discounted = state.prices[:, i] - state.disc[i]
    if np.any(discounted < 0):
        # not clamped, the discount cap is what keeps this nonnegative
        logging.warning("load_expense() negative discounted price for load {}: {}".format(i + 1, discounted))
    return float(np.dot(discounted, state.dem[i, 1:]) + state.dem[i, 0] * inst.pcc_sell_price[i])


def pcc_distance(inst: MarketInstance, state: TradeState, i: int) -> float:
    """Squared distance of load i's DER-facing demand from its electrically optimal row."""
    _check_index(i, inst.num_loads, "load")
    residual = state.dem[i, 1:] - inst.target_demand[i]
    return float(np.dot(residual, residual))


def report_distance(inst: MarketInstance, state: TradeState) -> float:
    """Sum over loads of the (non-squared) distance from the optimal demand rows; reporting only."""
    return float(np.linalg.norm(state.dem[:, 1:] - inst.target_demand, axis=1).sum())


def evaluate_objectives(inst: MarketInstance, state: TradeState) -> ObjectiveValues:
    return ObjectiveValues(
        der_revenue=np.array([der_revenue(inst, state, i) for i in range(inst.num_ders)]),
        load_expense=np.array([load_expense(inst, state, i) for i in range(inst.num_loads)]),
        pcc_distance=np.array([pcc_distance(inst, state, i) for i in range(inst.num_loads)]),
    )
