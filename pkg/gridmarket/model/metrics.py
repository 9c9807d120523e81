from dataclasses import dataclass
import logging
import math
from gridmarket.model.instance import MarketInstance
from gridmarket.model.state import TradeState
from gridmarket.model.objectives import der_revenue, load_expense

CSV_COLUMNS = ["alpha", "der_gain_pct", "load_gain_pct", "distance", "objective", "converged"]


@dataclass(frozen=True)
class SweepRecord:
    alpha: float
    der_gain_pct: float
    load_gain_pct: float
    distance: float
    objective: float
    converged: bool
    lambda_index: int = 0
    note: str = ""

    def failed(self) -> bool:
        return math.isnan(self.objective)


def der_gain(inst: MarketInstance, solution) -> float:
    """Aggregated DER revenue relative to selling everything to the PCC, in percent."""
    baseline = float((inst.surplus * inst.pcc_buy_price).sum())
    if baseline <= 0:
        logging.warning("der_gain() undefined: DERs have no baseline revenue")
        return float("nan")
    state = _state_of(solution)
    revenue = sum(der_revenue(inst, state, i) for i in range(inst.num_ders))
    return (revenue - baseline) / baseline * 100.0


def load_gain(inst: MarketInstance, solution) -> float:
    """Aggregated load savings relative to buying everything from the PCC, in percent."""
    baseline = float((inst.demand * inst.pcc_sell_price).sum())
    if baseline <= 0:
        logging.warning("load_gain() undefined: loads have no baseline expense")
        return float("nan")
    state = _state_of(solution)
    expense = sum(load_expense(inst, state, j) for j in range(inst.num_loads))
    return (baseline - expense) / baseline * 100.0


def _state_of(solution) -> TradeState:
    # accepts a solver Solution or a bare TradeState
    return getattr(solution, "state", solution)
