from dataclasses import dataclass
import numpy as np
from gridmarket.model.instance import MarketInstance


@dataclass(frozen=True)
class TradeState:
    """
    The four decision matrices of a trading round.

    prices  G x L      unitary price DER i proposes to load j
    alloc   G x (L+1)  energy DER i sells, column 0 goes to the PCC
    dem     L x (G+1)  energy load i buys, column 0 comes from the PCC
    disc    L x G      discount the PCC grants load i when buying from DER j
    """
    prices: np.ndarray
    alloc: np.ndarray
    dem: np.ndarray
    disc: np.ndarray

    def traded(self) -> np.ndarray:
        """G x L energy exchanged between each DER and load, taken from the DER side."""
        return self.alloc[:, 1:]

    def to_dict(self):
        return {
            "prices": self.prices.tolist(),
            "alloc": self.alloc.tolist(),
            "dem": self.dem.tolist(),
            "disc": self.disc.tolist(),
        }


def baseline_price(inst: MarketInstance) -> np.ndarray:
    # any value in (0, P_i] works when nothing is traded
    return np.minimum(inst.pcc_buy_price, inst.price_cap)


def baseline_state(inst: MarketInstance) -> TradeState:
    """No peer-to-peer trades: DERs sell everything to the PCC, loads buy everything from it."""
    G, L = inst.num_ders, inst.num_loads
    prices = np.repeat(baseline_price(inst)[:, None], L, axis=1)
    alloc = np.zeros((G, L + 1))
    alloc[:, 0] = inst.surplus
    dem = np.zeros((L, G + 1))
    dem[:, 0] = inst.demand
    return TradeState(prices=prices, alloc=alloc, dem=dem, disc=np.zeros((L, G)))


def state_from_trades(inst: MarketInstance, prices, traded, disc) -> TradeState:
    """Builds a consistent state from G x L prices and trades and L x G discounts; slacks absorb the rest."""
    prices = np.asarray(prices, dtype=float)
    traded = np.asarray(traded, dtype=float)
    disc = np.asarray(disc, dtype=float)
    alloc = np.concatenate([np.maximum(inst.surplus - traded.sum(axis=1), 0.0)[:, None], traded], axis=1)
    dem = np.concatenate([np.maximum(inst.demand - traded.sum(axis=0), 0.0)[:, None], traded.T], axis=1)
    return TradeState(prices=prices, alloc=alloc, dem=dem, disc=disc)
