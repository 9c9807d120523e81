"""
Region-partitioned solution of the surrogate scalarization by general-form consensus ADMM.

Each region keeps a local copy of every trading variable touching one of its
agents and minimizes its own share of the surrogate plus a proximal term. The
coordinator owns the global variables W, which carry the cross-region terms,
and the scaled duals. Message passing is simulated with request/response
objects; nothing leaves the process.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict
from typing import List, Optional, Tuple
import logging
import math
import numpy as np
import pandas as pd
from gridmarket.config import EPS, TOL_ADMM
from gridmarket.model import MarketInstance
from gridmarket.solver import (
    Solution,
    SolverOptions,
    as_weights,
    baseline_solution,
    finish_solution,
    minimize_projected,
)
from gridmarket.transform import ScalarizedObjective, SurrogateTerms, TradeLayout, Weights, build_layout

TRACE_COLUMNS = ["iteration", "primal_residual", "dual_residual", "objective"]


@dataclass(frozen=True)
class RegionPartition:
    """Agents grouped by the PCC branch they hang off; regions are 0-based here, 1-based in configs."""
    num_regions: int
    der_region: np.ndarray
    load_region: np.ndarray

    def ders(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.der_region == k)

    def loads(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.load_region == k)


def partition_by_branch(inst: MarketInstance) -> RegionPartition:
    if inst.region_of_agent is None:
        raise ValueError("instance has no region_of_agent; topology must be given")
    regions = np.asarray(inst.region_of_agent)
    if regions.shape != (inst.num_ders + inst.num_loads,):
        raise ValueError("region_of_agent needs one id per agent")
    if np.any(~np.isfinite(regions.astype(float))) or np.any(regions != np.round(regions)) or np.any(regions < 1):
        raise ValueError("region ids must be integers starting at 1")
    regions = regions.astype(int)
    num_regions = int(regions.max())
    missing = set(range(1, num_regions + 1)) - set(regions.tolist())
    if missing:
        raise ValueError("region ids must be contiguous, missing {}".format(sorted(missing)))
    return RegionPartition(
        num_regions=num_regions,
        der_region=regions[:inst.num_ders] - 1,
        load_region=regions[inst.num_ders:] - 1,
    )


@dataclass(frozen=True)
class ObjectiveSplit:
    layout: TradeLayout
    local: Tuple[SurrogateTerms, ...]
    cross: SurrogateTerms


def split_objective(inst: MarketInstance, lam, partition: RegionPartition) -> ObjectiveSplit:
    """
    Assigns every surrogate term to one region or to the cross-term.

    Pair terms go to a region when both endpoints are in it. Slack terms follow
    their agent and PCC quadratics follow their load.
    """
    layout = build_layout(inst, slack_floor=EPS)
    rd = partition.der_region[layout.ders]
    rl = partition.load_region[layout.loads]
    live_ders = np.flatnonzero(inst.surplus > 0)
    live_loads = np.flatnonzero(inst.demand > 0)
    local = []
    for k in range(partition.num_regions):
        inside = (rd == k) & (rl == k)
        local.append(SurrogateTerms(
            pair_der=inside,
            pair_load=inside.copy(),
            der_slack=live_ders[partition.der_region[live_ders] == k],
            load_slack=live_loads[partition.load_region[live_loads] == k],
            pcc_loads=partition.loads(k),
        ))
    crossing = rd != rl
    cross = SurrogateTerms(
        pair_der=crossing,
        pair_load=crossing.copy(),
        der_slack=np.zeros(0, dtype=int),
        load_slack=np.zeros(0, dtype=int),
        pcc_loads=np.zeros(0, dtype=int),
    )
    return ObjectiveSplit(layout=layout, local=tuple(local), cross=cross)


class ProximalObjective:
    """base(x) + rho/2 * sum ||x[idx] - target||^2 over the given blocks."""

    def __init__(self, base: ScalarizedObjective, rho: float, blocks):
        self.base = base
        self.rho = rho
        self.blocks = blocks

    def value(self, x) -> float:
        f = self.base.value(x)
        for idx, target in self.blocks:
            r = x[idx] - target
            f += 0.5 * self.rho * float(np.dot(r, r))
        return f

    def gradient(self, x) -> np.ndarray:
        g = self.base.gradient(x)
        for idx, target in self.blocks:
            np.add.at(g, idx, self.rho * (x[idx] - target))
        return g


@dataclass
class RegionRequest:
    center: np.ndarray  # W restricted to the region's copy, minus the scaled duals


@dataclass
class RegionResponse:
    region: int
    local: np.ndarray
    converged: bool


class Region:
    """One branch of the grid: solves its proximal subproblem on request."""

    def __init__(self, index: int, inst: MarketInstance, weights: Weights, split: ObjectiveSplit,
                 partition: RegionPartition, rho: float, opts: SolverOptions):
        layout = split.layout
        ders, loads = partition.ders(index), partition.loads(index)
        positions = np.flatnonzero(np.isin(layout.ders, ders) | np.isin(layout.loads, loads))
        self.index = index
        self.positions = positions
        self.layout = layout.sublayout(positions, ders, loads)
        terms = split.local[index]
        self.objective = ScalarizedObjective(inst, weights, self.layout, surrogate=True, terms=SurrogateTerms(
            pair_der=terms.pair_der[positions],
            pair_load=terms.pair_load[positions],
            der_slack=terms.der_slack,
            load_slack=terms.load_slack,
            pcc_loads=terms.pcc_loads,
        ))
        n = layout.n
        self.global_index = np.concatenate([positions, n + positions, 2 * n + positions])
        self.rho = rho
        self.opts = opts
        self.x = None

    def solve(self, request: RegionRequest) -> RegionResponse:
        full = np.arange(self.layout.size)
        prox = ProximalObjective(self.objective, self.rho, [(full, request.center)])
        x0 = request.center if self.x is None else self.x
        run = minimize_projected(prox.value, prox.gradient, self.layout.project, x0, self.opts)
        self.x = run.x
        return RegionResponse(region=self.index, local=run.x, converged=run.converged)


@dataclass(frozen=True)
class AdmmIteration:
    iteration: int
    primal_residual: float
    dual_residual: float
    objective: float

    def to_dict(self):
        return asdict(self)


@dataclass
class AdmmOptions:
    max_iter: int = 300
    tol: float = TOL_ADMM
    rho: float = 1.0
    inner: SolverOptions = field(default_factory=lambda: SolverOptions(max_iter=500))
    jobs: int = 1

    def __post_init__(self):
        if self.rho <= 0:
            raise ValueError("rho must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")


def admm_solve(
        inst: MarketInstance,
        lam,
        partition: Optional[RegionPartition] = None,
        rho: Optional[float] = None,
        opts: Optional[AdmmOptions] = None) -> Tuple[Solution, List[AdmmIteration]]:
    """
    Runs consensus ADMM until primal and dual residuals drop below tol.

    Returns the reconciled global state and the per-iteration trace. Prices are
    exchanged as window positions.
    """
    opts = opts or AdmmOptions()
    if rho is not None:
        if rho <= 0:
            raise ValueError("rho must be positive")
        opts = AdmmOptions(max_iter=opts.max_iter, tol=opts.tol, rho=rho, inner=opts.inner, jobs=opts.jobs)
    weights = as_weights(lam, inst)
    partition = partition if partition is not None else partition_by_branch(inst)

    split = split_objective(inst, weights, partition)
    layout = split.layout
    if layout.n == 0:
        solution = baseline_solution(inst, weights, surrogate=True)
        return solution, [AdmmIteration(1, 0.0, 0.0, solution.objective)]

    regions = [Region(k, inst, weights, split, partition, opts.rho, opts.inner) for k in range(partition.num_regions)]
    cross = ScalarizedObjective(inst, weights, layout, surrogate=True, terms=split.cross)
    full = ScalarizedObjective(inst, weights, layout, surrogate=True)

    W = layout.project(np.concatenate([np.full(layout.n, 0.5), layout.target, layout.sigma_hi]))
    duals = [np.zeros(len(r.global_index)) for r in regions]
    locals_ = [W[r.global_index].copy() for r in regions]
    m = sum(len(d) for d in duals)

    trace = []
    best_W, best_f = W.copy(), full.value(W)
    converged = False
    pool = ThreadPoolExecutor(max_workers=opts.jobs) if opts.jobs > 1 else None
    try:
        for it in range(1, opts.max_iter + 1):
            requests = [RegionRequest(center=W[r.global_index] - u) for r, u in zip(regions, duals)]
            if pool is not None:
                responses = list(pool.map(lambda ru: ru[0].solve(ru[1]), zip(regions, requests)))
            else:
                responses = [r.solve(req) for r, req in zip(regions, requests)]
            locals_ = [resp.local for resp in responses]

            # barrier: global block step on the cross-term with the local copies fixed
            blocks = [(r.global_index, v + u) for r, v, u in zip(regions, locals_, duals)]
            prox = ProximalObjective(cross, opts.rho, blocks)
            W_prev = W
            W = minimize_projected(prox.value, prox.gradient, layout.project, W_prev, opts.inner).x

            primal_sq = 0.0
            for k, r in enumerate(regions):
                gap = locals_[k] - W[r.global_index]
                duals[k] = duals[k] + gap
                primal_sq += float(np.dot(gap, gap))
            primal = math.sqrt(primal_sq / m)
            dual = opts.rho * float(np.linalg.norm(W - W_prev)) / math.sqrt(layout.size)
            f = full.value(W)
            trace.append(AdmmIteration(it, primal, dual, f))
            logging.debug("admm_solve() iteration {} primal {} dual {} objective {}".format(it, primal, dual, f))
            if np.isfinite(f) and f < best_f:
                best_W, best_f = W.copy(), f
            if primal < opts.tol and dual < opts.tol:
                converged = True
                break
    finally:
        if pool is not None:
            pool.shutdown()

    final = W if converged else best_W
    if not converged:
        logging.warning("admm_solve() stopped after {} iterations without consensus".format(len(trace)))
    solution = finish_solution(inst, weights, layout, final, True, converged, len(trace), partition.num_regions)
    return solution, trace


def residual_trace(trace: List[AdmmIteration]) -> List[Tuple[float, float]]:
    if not trace:
        raise ValueError("empty ADMM trace")
    return [(t.primal_residual, t.dual_residual) for t in trace]


def trace_frame(trace: List[AdmmIteration]) -> pd.DataFrame:
    return pd.DataFrame([t.to_dict() for t in trace], columns=TRACE_COLUMNS)


def write_trace_csv(trace: List[AdmmIteration], path: str):
    residual_trace(trace)
    trace_frame(trace).to_csv(path, index=False, float_format="%.6g")
