"""
Posynomial and log-domain forms of the market objectives, the scalarized
objective over the free trading variables, and the Jensen surrogate that makes
the scalarization separable across agent pairs.

Free variables are laid out per tradable (DER, load) pair k as one flat vector
x = [t_k | d_k | sigma_k]. t_k in [0, 1] places the price p_k = p_lo + t_k (p_hi - p_lo)
inside its window, d_k is the energy load j buys from DER i (equal by
consistency to what DER i sells to load j) and sigma_k in [0, 1] scales the
discount s = sigma * alpha * p.
"""
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple
import logging
import numpy as np
from gridmarket.config import EPS, SIGMA_MARGIN
from gridmarket.model import (
    MarketInstance,
    TradeState,
    compute_trade_mask,
    der_revenue,
    load_expense,
    pcc_distance,
    state_from_trades,
)
from gridmarket.model.state import baseline_price

DUMMY_PRICE = 1.0


@dataclass(frozen=True)
class PosyCoefficients:
    der_exponents: np.ndarray  # (L+1,)
    der_coefficients: np.ndarray  # G x (L+1)
    load_exponents: np.ndarray  # (G+1,)
    load_coefficients: np.ndarray  # L x (G+1)


def build_coefficients(inst: MarketInstance) -> PosyCoefficients:
    G, L = inst.num_ders, inst.num_loads
    der_exponents = np.ones(L + 1)
    der_exponents[0] = 0.0
    der_coefficients = np.ones((G, L + 1))
    der_coefficients[:, 0] = inst.pcc_buy_price
    load_exponents = np.ones(G + 1)
    load_exponents[0] = 0.0
    load_coefficients = np.ones((L, G + 1))
    load_coefficients[:, 0] = inst.pcc_sell_price
    return PosyCoefficients(der_exponents, der_coefficients, load_exponents, load_coefficients)


@dataclass(frozen=True)
class Weights:
    """Scalarization weights ordered [DER terms | load terms | PCC terms]."""
    values: np.ndarray
    num_ders: int
    num_loads: int

    @classmethod
    def create(cls, values, num_ders: int, num_loads: int) -> "Weights":
        values = np.asarray(values, dtype=float)
        expected = num_ders + 2 * num_loads
        if values.shape != (expected,):
            raise ValueError("lambda has {} entries but G+2L = {} are required".format(values.size, expected))
        if np.any(values < 0) or np.any(values > 1) or not np.all(np.isfinite(values)):
            raise ValueError("lambda entries must lie in [0,1]")
        if abs(values.sum() - 1.0) > 1e-12:
            raise ValueError("lambda must sum to 1, got {!r}".format(values.sum()))
        return cls(values=values, num_ders=num_ders, num_loads=num_loads)

    @property
    def der(self) -> np.ndarray:
        return self.values[:self.num_ders]

    @property
    def load(self) -> np.ndarray:
        return self.values[self.num_ders:self.num_ders + self.num_loads]

    @property
    def pcc(self) -> np.ndarray:
        return self.values[self.num_ders + self.num_loads:]


# -- row forms -------------------------------------------------------------

def der_rows(state: TradeState, i: int) -> Tuple[np.ndarray, np.ndarray]:
    """Price and allocation rows of DER i with the dummy price and PCC slack at index 0."""
    p_row = np.concatenate([[DUMMY_PRICE], state.prices[i]])
    return p_row, state.alloc[i].copy()


def load_rows(state: TradeState, i: int) -> Tuple[np.ndarray, np.ndarray]:
    """Discounted price row p'_{j,i} = p_{j,i} - s_{i,j} and demand row of load i, PCC at index 0."""
    pp_row = np.concatenate([[DUMMY_PRICE], state.prices[:, i] - state.disc[i]])
    return pp_row, state.dem[i].copy()


def posy_der_objective(coeffs: PosyCoefficients, i: int, p_row, h_row) -> float:
    p_row, h_row = np.asarray(p_row, dtype=float), np.asarray(h_row, dtype=float)
    return float(np.sum(coeffs.der_coefficients[i] * p_row ** coeffs.der_exponents * h_row))


def posy_load_objective(coeffs: PosyCoefficients, i: int, pp_row, d_row) -> float:
    pp_row, d_row = np.asarray(pp_row, dtype=float), np.asarray(d_row, dtype=float)
    return float(np.sum(coeffs.load_coefficients[i] * pp_row ** coeffs.load_exponents * d_row))


def _log_terms(exponents, coefficients, price_row, qty_row, support):
    support = np.asarray(sorted(support), dtype=int)
    prices = np.asarray(price_row, dtype=float)[support]
    qty = np.asarray(qty_row, dtype=float)[support]
    if np.any(prices <= 0) or np.any(qty <= 0):
        raise ValueError("log-domain form needs strictly positive variables on its support")
    return exponents[support] * np.log(prices) + np.log(qty) + np.log(coefficients[support])


def log_domain_der_objective(coeffs: PosyCoefficients, i: int, p_row, h_row, support) -> float:
    return float(np.exp(_log_terms(coeffs.der_exponents, coeffs.der_coefficients[i], p_row, h_row, support)).sum())


def log_domain_load_objective(coeffs: PosyCoefficients, i: int, pp_row, d_row, support) -> float:
    return float(np.exp(_log_terms(coeffs.load_exponents, coeffs.load_coefficients[i], pp_row, d_row, support)).sum())


def jensen_surrogate(y) -> float:
    """Sum of logs of the posynomial terms, a lower bound on |y| log(mean y)."""
    y = np.asarray(y, dtype=float)
    if np.any(y <= 0):
        raise ValueError("surrogate terms must be strictly positive")
    return float(np.log(y).sum())


def jensen_surrogate_der(coeffs: PosyCoefficients, i: int, p_row, h_row, support) -> float:
    return float(_log_terms(coeffs.der_exponents, coeffs.der_coefficients[i], p_row, h_row, support).sum())


def jensen_surrogate_load(coeffs: PosyCoefficients, i: int, pp_row, d_row, support) -> float:
    return float(_log_terms(coeffs.load_exponents, coeffs.load_coefficients[i], pp_row, d_row, support).sum())


def support_of(row) -> list:
    return [int(k) for k in np.flatnonzero(np.asarray(row) > 0)]


def scalarized_objective(inst: MarketInstance, weights: Weights, state: TradeState, surrogate: bool = False) -> float:
    """
    -sum lambda_i log U'_G + sum lambda_j log U'_L + sum lambda_j U_PCC evaluated on a state.

    Agents with zero surplus (or demand) contribute a constant and are left out.
    With surrogate=True each log U' is replaced by the Jensen surrogate over the
    nonzero support of the agent's row.
    """
    coeffs = build_coefficients(inst)
    total = 0.0
    for i in range(inst.num_ders):
        if inst.surplus[i] <= 0:
            continue
        if surrogate:
            p_row, h_row = der_rows(state, i)
            total -= weights.der[i] * jensen_surrogate_der(coeffs, i, p_row, h_row, support_of(h_row))
        else:
            revenue = der_revenue(inst, state, i)
            if revenue <= 0:
                raise ValueError("nonpositive revenue for DER {} inside log".format(i + 1))
            total -= weights.der[i] * np.log(revenue)
    for j in range(inst.num_loads):
        if inst.demand[j] > 0:
            if surrogate:
                pp_row, d_row = load_rows(state, j)
                total += weights.load[j] * jensen_surrogate_load(coeffs, j, pp_row, d_row, support_of(d_row))
            else:
                expense = load_expense(inst, state, j)
                if expense <= 0:
                    raise ValueError("nonpositive expense for load {} inside log".format(j + 1))
                total += weights.load[j] * np.log(expense)
        total += weights.pcc[j] * pcc_distance(inst, state, j)
    return float(total)


# -- free-variable layout ----------------------------------------------------

@dataclass(frozen=True)
class CapGroup:
    agent: int
    positions: np.ndarray
    cap: float


@dataclass(frozen=True)
class TradeLayout:
    """Tradable pairs, their variable bounds and the capacity groups coupling their demands."""
    num_ders: int
    num_loads: int
    alpha: float
    pair_ids: np.ndarray
    ders: np.ndarray
    loads: np.ndarray
    p_lo: np.ndarray
    p_hi: np.ndarray
    floor: np.ndarray
    sigma_hi: np.ndarray
    target: np.ndarray
    der_groups: Tuple[CapGroup, ...] = field(default=())
    load_groups: Tuple[CapGroup, ...] = field(default=())
    slack_floor: float = 0.0

    @property
    def n(self) -> int:
        return len(self.ders)

    @property
    def size(self) -> int:
        return 3 * self.n

    @property
    def width(self) -> np.ndarray:
        return self.p_hi - self.p_lo

    def split(self, x):
        n = self.n
        return x[:n], x[n:2 * n], x[2 * n:]

    def prices(self, t) -> np.ndarray:
        return self.p_lo + np.asarray(t, dtype=float) * self.width

    def window_position(self, p) -> np.ndarray:
        width = self.width
        return np.where(width > 0, (np.asarray(p, dtype=float) - self.p_lo) / np.where(width > 0, width, 1.0), 0.0)

    def lower(self) -> np.ndarray:
        return np.concatenate([np.zeros(self.n), self.floor, np.zeros(self.n)])

    def project(self, x) -> np.ndarray:
        t, d, sigma = self.split(np.asarray(x, dtype=float))
        return np.concatenate([
            np.clip(t, 0.0, 1.0),
            self.project_demand(d),
            np.clip(sigma, 0.0, self.sigma_hi),
        ])

    def is_feasible_demand(self, d, tol=1e-12) -> bool:
        if np.any(d < self.floor - tol):
            return False
        for group in self.load_groups + self.der_groups:
            if d[group.positions].sum() > group.cap + tol * max(group.cap, 1.0):
                return False
        return True

    def project_demand(self, v, max_iter: int = 200) -> np.ndarray:
        """Euclidean projection onto {d >= floor, per-load and per-DER sums <= caps} by Dykstra's method."""
        v = np.asarray(v, dtype=float)
        if self.is_feasible_demand(v):
            return v.copy()
        x = v.copy()
        pa = np.zeros_like(x)
        pb = np.zeros_like(x)
        for _ in range(max_iter):
            y = _project_family(x + pa, self.floor, self.load_groups)
            pa = x + pa - y
            x_new = _project_family(y + pb, self.floor, self.der_groups)
            pb = y + pb - x_new
            done = np.max(np.abs(x_new - x)) <= 1e-13 * (1.0 + np.max(np.abs(x)))
            x = x_new
            if done:
                break
        return self._shrink(x)

    def _shrink(self, d) -> np.ndarray:
        # guarantees feasibility after a truncated Dykstra run; load rows first, DER columns only shrink further
        d = np.maximum(d, self.floor)
        for group in self.load_groups + self.der_groups:
            pos = group.positions
            low = self.floor[pos]
            total = d[pos].sum()
            if total > group.cap:
                room = max(group.cap - low.sum(), 0.0)
                d[pos] = low + (d[pos] - low) * (room / (total - low.sum()))
        return d

    def from_state(self, state: TradeState) -> np.ndarray:
        p = state.prices[self.ders, self.loads]
        d = state.alloc[self.ders, self.loads + 1]
        if self.alpha > 0:
            sigma = state.disc[self.loads, self.ders] / (self.alpha * p)
        else:
            sigma = np.ones(self.n)
        return self.project(np.concatenate([self.window_position(p), d, sigma]))

    def to_state(self, inst: MarketInstance, x, zero_below: float = 10 * EPS) -> TradeState:
        """Full trade state; demands under `zero_below` are reported as no trade."""
        t, d, sigma = self.split(np.asarray(x, dtype=float))
        p = self.prices(t)
        prices = np.repeat(baseline_price(inst)[:, None], inst.num_loads, axis=1)
        traded = np.zeros((inst.num_ders, inst.num_loads))
        disc = np.zeros((inst.num_loads, inst.num_ders))
        prices[self.ders, self.loads] = p
        traded[self.ders, self.loads] = np.where(d < zero_below, 0.0, d)
        disc[self.loads, self.ders] = sigma * self.alpha * p
        return state_from_trades(inst, prices, traded, disc)

    def sublayout(self, positions, der_agents, load_agents) -> "TradeLayout":
        """Restriction to some pairs, keeping only the capacity groups of the listed agents."""
        positions = np.asarray(positions, dtype=int)
        remap = {int(old): new for new, old in enumerate(positions)}

        def _groups(groups, agents):
            kept = []
            for group in groups:
                if group.agent in agents:
                    kept.append(CapGroup(group.agent, np.array([remap[int(k)] for k in group.positions], dtype=int), group.cap))
            return tuple(kept)

        return TradeLayout(
            num_ders=self.num_ders,
            num_loads=self.num_loads,
            alpha=self.alpha,
            pair_ids=self.pair_ids[positions],
            ders=self.ders[positions],
            loads=self.loads[positions],
            p_lo=self.p_lo[positions],
            p_hi=self.p_hi[positions],
            floor=self.floor[positions],
            sigma_hi=self.sigma_hi[positions],
            target=self.target[positions],
            der_groups=_groups(self.der_groups, set(der_agents)),
            load_groups=_groups(self.load_groups, set(load_agents)),
            slack_floor=self.slack_floor,
        )


def _simplex_projection(v, s):
    """Projection onto {x >= 0, sum(x) = s}, computed on v - max(v) so huge entries keep their precision."""
    top = float(np.max(v))
    u = np.sort(v - top)[::-1]
    cssv = np.cumsum(u)
    hits = np.nonzero(u * np.arange(1, len(v) + 1) > (cssv - s))[0]
    rho = int(hits[-1]) if len(hits) else 0
    theta = (cssv[rho] - s) / (rho + 1.0)
    return np.maximum(v - top - theta, 0.0)


def _project_capped(v, low, cap):
    """Projection onto {x >= low, sum(x) <= cap}."""
    room = cap - low.sum()
    if room <= 0:
        return low.copy()
    y = v - low
    clipped = np.maximum(y, 0.0)
    if clipped.sum() <= room:
        return low + clipped
    return low + _simplex_projection(y, room)


def _project_family(v, floor, groups):
    out = np.maximum(v, floor)
    for group in groups:
        out[group.positions] = _project_capped(v[group.positions], floor[group.positions], group.cap)
    return out


def tradable_pairs(inst: MarketInstance, mask=None, slack_floor: float = 0.0) -> np.ndarray:
    """G x L pairs that can carry a positive trade: price window open and both sides have energy to spare."""
    active = compute_trade_mask(inst).active if mask is None else np.asarray(getattr(mask, "active", mask), dtype=bool)
    return active & (inst.surplus[:, None] > 2 * slack_floor) & (inst.demand[None, :] > 2 * slack_floor)


def build_layout(inst: MarketInstance, mask=None, floor: float = EPS, slack_floor: float = 0.0) -> TradeLayout:
    tradable = tradable_pairs(inst, mask, slack_floor)
    pairs = np.argwhere(tradable)
    ders = pairs[:, 0].astype(int) if len(pairs) else np.zeros(0, dtype=int)
    loads = pairs[:, 1].astype(int) if len(pairs) else np.zeros(0, dtype=int)
    n = len(ders)
    der_cap = inst.surplus - slack_floor
    load_cap = inst.demand - slack_floor
    n_der = np.bincount(ders, minlength=inst.num_ders)
    n_load = np.bincount(loads, minlength=inst.num_loads)

    p_lo = np.empty(n)
    p_hi = np.empty(n)
    floors = np.empty(n)
    for k, (i, j) in enumerate(zip(ders, loads)):
        low, high = inst.price_window(i, j)
        p_lo[k] = max(low, EPS)
        p_hi[k] = high
        floors[k] = min(floor, der_cap[i] / (2 * n_der[i]), load_cap[j] / (2 * n_load[j]))

    alpha = inst.discount_cap
    sigma_hi = np.full(n, 1.0 if alpha < 1.0 else 1.0 - SIGMA_MARGIN)
    der_groups = tuple(CapGroup(i, np.flatnonzero(ders == i), float(der_cap[i])) for i in range(inst.num_ders) if n_der[i])
    load_groups = tuple(CapGroup(j, np.flatnonzero(loads == j), float(load_cap[j])) for j in range(inst.num_loads) if n_load[j])
    return TradeLayout(
        num_ders=inst.num_ders,
        num_loads=inst.num_loads,
        alpha=alpha,
        pair_ids=np.arange(n),
        ders=ders,
        loads=loads,
        p_lo=p_lo,
        p_hi=p_hi,
        floor=floors,
        sigma_hi=sigma_hi,
        target=inst.target_demand[loads, ders] if n else np.zeros(0),
        der_groups=der_groups,
        load_groups=load_groups,
        slack_floor=slack_floor,
    )


# -- vectorized scalarization -------------------------------------------------

@dataclass(frozen=True)
class SurrogateTerms:
    """Which surrogate terms an objective carries: per-pair DER/load logs, agent slack logs, PCC quadratics."""
    pair_der: np.ndarray
    pair_load: np.ndarray
    der_slack: np.ndarray
    load_slack: np.ndarray
    pcc_loads: np.ndarray

    @classmethod
    def full(cls, inst: MarketInstance, layout: TradeLayout) -> "SurrogateTerms":
        return cls(
            pair_der=np.ones(layout.n, dtype=bool),
            pair_load=np.ones(layout.n, dtype=bool),
            der_slack=np.flatnonzero(inst.surplus > 0),
            load_slack=np.flatnonzero(inst.demand > 0),
            pcc_loads=np.arange(inst.num_loads),
        )


class ScalarizedObjective:
    """
    Scalarized objective and gradient over a layout's free variables.

    In surrogate mode only the terms selected by `terms` are evaluated, which
    lets the distributed solver split the surrogate across regions.
    """

    def __init__(
            self,
            inst: MarketInstance,
            weights: Weights,
            layout: TradeLayout,
            surrogate: bool = False,
            terms: Optional[SurrogateTerms] = None):
        self.inst = inst
        self.weights = weights
        self.layout = layout
        self.surrogate = surrogate
        self.terms = terms if terms is not None else SurrogateTerms.full(inst, layout)
        n = layout.n
        ders, loads = layout.ders, layout.loads
        self.der_onehot = np.zeros((inst.num_ders, n))
        self.der_onehot[ders, np.arange(n)] = 1.0
        self.load_onehot = np.zeros((inst.num_loads, n))
        self.load_onehot[loads, np.arange(n)] = 1.0
        self.gamma_k = inst.pcc_buy_price[ders]
        self.pi_k = inst.pcc_sell_price[loads]
        self.lam_der_k = weights.der[ders]
        self.lam_load_k = weights.load[loads]
        self.lam_pcc_k = weights.pcc[loads]
        self.live_der = inst.surplus > 0
        self.live_load = inst.demand > 0
        # squared target of pairs without a variable; they stay at zero demand
        covered = np.zeros((inst.num_loads, inst.num_ders), dtype=bool)
        covered[loads, ders] = True
        self.pcc_const = np.where(covered, 0.0, inst.target_demand ** 2).sum(axis=1)
        self.in_pcc = np.zeros(inst.num_loads, dtype=bool)
        self.in_pcc[self.terms.pcc_loads] = True

    def value(self, x) -> float:
        return float(self.value_batch(np.asarray(x, dtype=float)[None, :])[0])

    def value_batch(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        n = self.layout.n
        P, Dm, S = self.layout.prices(X[:, :n]), X[:, n:2 * n], X[:, 2 * n:]
        if self.surrogate:
            return self._surrogate_batch(P, Dm, S)
        return self._original_batch(P, Dm, S)

    def _pcc_batch(self, Dm):
        lp = self.weights.pcc * self.in_pcc
        Q = ((Dm - self.layout.target) ** 2) @ self.load_onehot.T + self.pcc_const
        return Q @ lp

    def _original_batch(self, P, Dm, S):
        inst, alpha = self.inst, self.layout.alpha
        UG = inst.surplus * inst.pcc_buy_price + ((P - self.gamma_k) * Dm) @ self.der_onehot.T
        UL = inst.demand * inst.pcc_sell_price + ((P * (1 - alpha * S) - self.pi_k) * Dm) @ self.load_onehot.T
        UG, UL = UG[:, self.live_der], UL[:, self.live_load]
        valid = np.all(UG > 0, axis=1) & np.all(UL > 0, axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            f = (-np.log(np.where(UG > 0, UG, 1.0)) @ self.weights.der[self.live_der]
                 + np.log(np.where(UL > 0, UL, 1.0)) @ self.weights.load[self.live_load]
                 + self._pcc_batch(Dm))
        return np.where(valid & np.isfinite(f), f, np.inf)

    def _surrogate_batch(self, P, Dm, S):
        inst, alpha, terms = self.inst, self.layout.alpha, self.terms
        discounted = P * (1 - alpha * S)
        ids_g, ids_l = terms.der_slack, terms.load_slack
        SG = inst.surplus[ids_g] - (Dm @ self.der_onehot.T)[:, ids_g]
        SL = inst.demand[ids_l] - (Dm @ self.load_onehot.T)[:, ids_l]
        valid = (np.all(P > 0, axis=1) & np.all(Dm > 0, axis=1) & np.all(discounted > 0, axis=1)
                 & np.all(SG > 0, axis=1) & np.all(SL > 0, axis=1))
        with np.errstate(divide="ignore", invalid="ignore"):
            log_y = np.log(P) + np.log(Dm)
            log_z = np.log(discounted) + np.log(Dm)
            f = (-(log_y * terms.pair_der) @ self.lam_der_k
                 + (log_z * terms.pair_load) @ self.lam_load_k
                 - np.log(inst.pcc_buy_price[ids_g] * SG) @ self.weights.der[ids_g]
                 + np.log(inst.pcc_sell_price[ids_l] * SL) @ self.weights.load[ids_l]
                 + self._pcc_batch(Dm))
        return np.where(valid & np.isfinite(f), f, np.inf)

    def gradient(self, x) -> np.ndarray:
        t, d, sigma = self.layout.split(np.asarray(x, dtype=float))
        p = self.layout.prices(t)
        width = self.layout.width
        alpha = self.layout.alpha
        g_pcc = self.in_pcc[self.layout.loads] * 2 * self.lam_pcc_k * (d - self.layout.target)
        if self.surrogate:
            terms, inst = self.terms, self.inst
            pd_, pl_ = terms.pair_der.astype(float), terms.pair_load.astype(float)
            gp = -pd_ * self.lam_der_k / p + pl_ * self.lam_load_k / p
            gs = pl_ * self.lam_load_k * (-alpha) / (1 - alpha * sigma)
            gd = -pd_ * self.lam_der_k / d + pl_ * self.lam_load_k / d + g_pcc
            der_coef = np.zeros(inst.num_ders)
            ids = terms.der_slack
            der_coef[ids] = self.weights.der[ids] / (inst.surplus[ids] - (self.der_onehot @ d)[ids])
            load_coef = np.zeros(inst.num_loads)
            ids = terms.load_slack
            load_coef[ids] = -self.weights.load[ids] / (inst.demand[ids] - (self.load_onehot @ d)[ids])
            gd = gd + der_coef[self.layout.ders] + load_coef[self.layout.loads]
            return np.concatenate([gp * width, gd, gs])

        inst = self.inst
        UG = inst.surplus * inst.pcc_buy_price + self.der_onehot @ ((p - self.gamma_k) * d)
        UL = inst.demand * inst.pcc_sell_price + self.load_onehot @ ((p * (1 - alpha * sigma) - self.pi_k) * d)
        wG = np.where(self.live_der, self.weights.der / np.where(UG != 0, UG, 1.0), 0.0)[self.layout.ders]
        wL = np.where(self.live_load, self.weights.load / np.where(UL != 0, UL, 1.0), 0.0)[self.layout.loads]
        gp = -wG * d + wL * (1 - alpha * sigma) * d
        gd = -wG * (p - self.gamma_k) + wL * (p * (1 - alpha * sigma) - self.pi_k) + g_pcc
        gs = -wL * alpha * p * d
        return np.concatenate([gp * width, gd, gs])


def scalarized_gradient(
        inst: MarketInstance,
        weights: Weights,
        state: TradeState,
        active_mask=None,
        surrogate: bool = False) -> np.ndarray:
    """Gradient [d/dt | d/dd | d/dsigma] over the tradable pairs of `active_mask`, in row-major pair order.

    t is the price position inside its window, so d/dt = (p_hi - p_lo) d/dp.
    """
    layout = build_layout(inst, active_mask, slack_floor=EPS if surrogate else 0.0)
    objective = ScalarizedObjective(inst, weights, layout, surrogate=surrogate)
    x = layout.from_state(state)
    logging.debug("scalarized_gradient() over {} pairs".format(layout.n))
    return objective.gradient(x)
