from dataclasses import dataclass, field, replace
from enum import Enum
from typing import List, Optional, Sequence, Tuple
import numpy as np


class ViolationKind(Enum):
    SHAPE = "shape"
    VALUE = "value"
    DISCOUNT_CAP = "discount_cap"
    TARGET = "target"
    REGION = "region"
    OFFER = "offer"
    DEMAND = "demand"
    PRICE = "price"
    DISCOUNT = "discount"
    CONSISTENCY = "consistency"
    SLACK = "slack"
    RATIONALITY = "rationality"
    INACTIVE_TRADE = "inactive_trade"


@dataclass(frozen=True)
class Violation:
    kind: ViolationKind
    message: str
    indices: Tuple[int, ...] = ()

    def __str__(self):
        return self.message


@dataclass(frozen=True)
class MarketInstance:
    """
    One trading round: G DERs with surplus energy, L loads with demand, the PCC
    contract prices and the electrically optimal demand matrix.

    Vectors are indexed 0-based internally; messages and configs are 1-based.
    """
    num_ders: int
    num_loads: int
    surplus: np.ndarray
    demand: np.ndarray
    pcc_buy_price: np.ndarray
    pcc_sell_price: np.ndarray
    price_cap: np.ndarray
    discount_cap: float
    target_demand: np.ndarray
    region_of_agent: Optional[np.ndarray] = field(default=None)

    @classmethod
    def create(
            cls,
            surplus: Sequence[float],
            demand: Sequence[float],
            pcc_buy_price: Sequence[float],
            pcc_sell_price: Sequence[float],
            price_cap: Sequence[float],
            discount_cap: float,
            target_demand,
            region_of_agent: Optional[Sequence[int]] = None,
            num_ders: Optional[int] = None,
            num_loads: Optional[int] = None):
        surplus = np.asarray(surplus, dtype=float)
        demand = np.asarray(demand, dtype=float)
        return cls(
            num_ders=len(surplus) if num_ders is None else int(num_ders),
            num_loads=len(demand) if num_loads is None else int(num_loads),
            surplus=surplus,
            demand=demand,
            pcc_buy_price=np.asarray(pcc_buy_price, dtype=float),
            pcc_sell_price=np.asarray(pcc_sell_price, dtype=float),
            price_cap=np.asarray(price_cap, dtype=float),
            discount_cap=float(discount_cap),
            target_demand=np.atleast_2d(np.asarray(target_demand, dtype=float)),
            region_of_agent=None if region_of_agent is None else np.asarray(region_of_agent),
        )

    def with_discount_cap(self, alpha: float) -> "MarketInstance":
        return replace(self, discount_cap=float(alpha))

    def price_window(self, i: int, j: int) -> Tuple[float, float]:
        """Closed price interval [low, high] for DER i selling to load j; empty when low > high."""
        low = self.pcc_buy_price[i]
        if self.discount_cap >= 1.0:
            high = self.price_cap[i]
        else:
            high = min(self.price_cap[i], self.pcc_sell_price[j] / (1.0 - self.discount_cap))
        return low, high


def _check_vector(name, values, length, strictly_positive, violations):
    if values.ndim != 1 or len(values) != length:
        violations.append(Violation(
            ViolationKind.SHAPE,
            "{} has length {} but {} entries are declared".format(name, values.size, length)))
        return
    for k, v in enumerate(values):
        if not np.isfinite(v):
            violations.append(Violation(ViolationKind.VALUE, "{} {} is not finite".format(name, k + 1), (k + 1,)))
        elif strictly_positive and v <= 0:
            violations.append(Violation(ViolationKind.VALUE, "{} {} must be positive".format(name, k + 1), (k + 1,)))
        elif v < 0:
            violations.append(Violation(ViolationKind.VALUE, "{} {} is negative".format(name, k + 1), (k + 1,)))


def validate_instance(inst: MarketInstance) -> List[Violation]:
    """Every violated MarketInstance invariant; an empty list means the instance is valid."""
    violations = []
    if inst.num_ders < 1 or inst.num_loads < 1:
        violations.append(Violation(ViolationKind.SHAPE, "at least one DER and one load are required"))
        return violations

    _check_vector("surplus", inst.surplus, inst.num_ders, False, violations)
    _check_vector("demand", inst.demand, inst.num_loads, False, violations)
    _check_vector("pcc_buy_price", inst.pcc_buy_price, inst.num_ders, True, violations)
    _check_vector("pcc_sell_price", inst.pcc_sell_price, inst.num_loads, True, violations)
    _check_vector("price_cap", inst.price_cap, inst.num_ders, True, violations)

    if not np.isfinite(inst.discount_cap) or not 0.0 <= inst.discount_cap <= 1.0:
        violations.append(Violation(ViolationKind.DISCOUNT_CAP, "discount_cap out of [0,1]: {}".format(inst.discount_cap)))

    target = inst.target_demand
    if target.shape != (inst.num_loads, inst.num_ders):
        violations.append(Violation(
            ViolationKind.SHAPE,
            "target_demand has shape {} but ({}, {}) is required".format(target.shape, inst.num_loads, inst.num_ders)))
    else:
        for i in range(inst.num_loads):
            for j in range(inst.num_ders):
                if not np.isfinite(target[i, j]) or target[i, j] < 0:
                    violations.append(Violation(
                        ViolationKind.VALUE,
                        "target_demand ({},{}) must be finite and nonnegative".format(i + 1, j + 1),
                        (i + 1, j + 1)))
            if inst.demand.shape == (inst.num_loads,) and target[i].sum() > inst.demand[i] + 1e-9 * max(inst.demand[i], 1.0):
                violations.append(Violation(ViolationKind.TARGET, "target exceeds demand for load {}".format(i + 1), (i + 1,)))

    if inst.region_of_agent is not None:
        regions = inst.region_of_agent
        if regions.shape != (inst.num_ders + inst.num_loads,):
            violations.append(Violation(
                ViolationKind.REGION,
                "regions has {} entries but {} agents are declared".format(regions.size, inst.num_ders + inst.num_loads)))
        else:
            for k, r in enumerate(regions):
                if not float(r).is_integer() or r < 1:
                    violations.append(Violation(ViolationKind.REGION, "agent {} has invalid region id {}".format(k + 1, r), (k + 1,)))

    return violations
