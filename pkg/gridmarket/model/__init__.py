from gridmarket.model.instance import MarketInstance, Violation, ViolationKind, validate_instance
from gridmarket.model.state import TradeState, baseline_state, state_from_trades
from gridmarket.model.objectives import (
    ObjectiveValues,
    der_revenue,
    load_expense,
    pcc_distance,
    report_distance,
    evaluate_objectives,
)
from gridmarket.model.feasibility import TradeMask, compute_trade_mask, check_feasible, edge_trades, rationality_check
from gridmarket.model.metrics import SweepRecord, CSV_COLUMNS, der_gain, load_gain
