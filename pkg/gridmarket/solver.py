"""
Centralized minimization of the scalarized market objective.

Spectral projected gradient: Barzilai-Borwein steps with a nonmonotone Armijo
test along the projection arc, restarted from several deterministic and
seeded-random points. Also the brute-force grid oracle used to check it, and
Pareto sweeps over (lambda, alpha) that warm-start each alpha from its
neighbour.
"""
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, List, Optional, Sequence, Tuple
import itertools
import logging
import numpy as np
from gridmarket.config import EPS
from gridmarket.model import (
    MarketInstance,
    ObjectiveValues,
    SweepRecord,
    TradeState,
    baseline_state,
    der_gain,
    edge_trades,
    evaluate_objectives,
    load_gain,
    report_distance,
)
from gridmarket.transform import (
    ScalarizedObjective,
    TradeLayout,
    Weights,
    build_layout,
    scalarized_objective,
)

ARMIJO = 1e-4
SHRINK = 0.5
STEP_MIN = 1e-10
STEP_MAX = 1e10
MEMORY = 10  # objective values the nonmonotone test compares against
SEGMENT = 9  # consecutive alphas solved in one warm-started chain
WARM_RESTARTS = 2  # cold starts tried next to the warm start


class SolverError(RuntimeError):
    pass


@dataclass
class SolverOptions:
    max_iter: int = 5000
    tol_grad: float = 1e-7
    tol_step: float = 1e-12
    num_restarts: int = 8
    rng_seed: int = 0
    floor: float = EPS

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if self.num_restarts < 1:
            raise ValueError("num_restarts must be at least 1")
        if min(self.tol_grad, self.tol_step, self.floor) <= 0:
            raise ValueError("tolerances and floor must be positive")


@dataclass
class Solution:
    state: TradeState
    objective: float
    objective_parts: ObjectiveValues
    kkt_residual: float
    converged: bool
    iterations: int
    restarts_used: int
    surrogate: bool = False
    note: str = ""


@dataclass
class RunResult:
    x: np.ndarray
    objective: float
    iterations: int
    converged: bool


def as_weights(lam, inst: MarketInstance) -> Weights:
    if isinstance(lam, Weights):
        if (lam.num_ders, lam.num_loads) != (inst.num_ders, inst.num_loads):
            raise ValueError("weights built for a different market size")
        return lam
    if lam is None or (isinstance(lam, str) and lam == "default"):
        return default_lambda(inst.num_ders, inst.num_loads)
    return Weights.create(lam, inst.num_ders, inst.num_loads)


def default_lambda(num_ders: int, num_loads: int) -> Weights:
    """Equal weights within each objective class, loads at a/0.3 and PCC terms at 10a, normalized."""
    if num_ders < 1 or num_loads < 1:
        raise ValueError("need at least one DER and one load")
    a = 1.0 / (num_ders + num_loads / 0.3 + 10.0 * num_loads)
    values = np.concatenate([
        np.full(num_ders, a),
        np.full(num_loads, a / 0.3),
        np.full(num_loads, 10.0 * a),
    ])
    return Weights(values=values, num_ders=num_ders, num_loads=num_loads)


def projected_residual(x, g, project: Callable) -> float:
    if len(x) == 0:
        return 0.0
    return float(np.max(np.abs(x - project(x - g))))


def _unit_step(g) -> float:
    """Step that moves the steepest coordinate by one unit."""
    top = float(np.max(np.abs(g))) if len(g) else 0.0
    return 1.0 / top if top > 0 else 1.0


def minimize_projected(
        fun: Callable,
        grad: Callable,
        project: Callable,
        x0: np.ndarray,
        opts: SolverOptions) -> RunResult:
    x = project(np.asarray(x0, dtype=float))
    f = fun(x)
    if not np.isfinite(f):
        return RunResult(x=x, objective=f, iterations=0, converged=False)
    g = grad(x)
    recent = [f]
    x_prev = g_prev = None
    converged = False
    it = 0
    for it in range(1, opts.max_iter + 1):
        if projected_residual(x, g, project) < opts.tol_grad:
            converged = True
            break
        step = _unit_step(g)
        if x_prev is not None:
            s, y = x - x_prev, g - g_prev
            sy = float(np.dot(s, y))
            if sy > 0:
                step = float(np.dot(s, s)) / sy
        step = min(max(step, STEP_MIN), STEP_MAX)

        # nonmonotone: compare against the worst of the last MEMORY values
        reference = max(recent)
        accepted = False
        while step >= STEP_MIN:
            x_new = project(x - step * g)
            f_new = fun(x_new)
            if np.isfinite(f_new) and f_new <= reference + ARMIJO * float(np.dot(g, x_new - x)):
                accepted = True
                break
            step *= SHRINK
        if not accepted or float(np.max(np.abs(x_new - x))) < opts.tol_step:
            break
        x_prev, g_prev = x, g
        x, f = x_new, f_new
        g = grad(x)
        recent = (recent + [f])[-MEMORY:]
    if not converged:
        converged = projected_residual(x, g, project) < opts.tol_grad
    return RunResult(x=x, objective=f, iterations=it, converged=converged)


def start_points(layout: TradeLayout, opts: SolverOptions) -> List[np.ndarray]:
    """Baseline start, D*-projected start, then seeded random starts drawn in sequence."""
    n = layout.n
    starts = [np.concatenate([np.zeros(n), layout.floor, layout.sigma_hi])]
    if opts.num_restarts > 1:
        starts.append(np.concatenate([np.full(n, 0.5), layout.target, layout.sigma_hi]))
    rng = np.random.default_rng(opts.rng_seed)
    pair_cap = np.full(n, np.inf)
    for group in layout.der_groups + layout.load_groups:
        pair_cap[group.positions] = np.minimum(pair_cap[group.positions], group.cap)
    pair_cap = np.where(np.isfinite(pair_cap), pair_cap, layout.floor)
    while len(starts) < opts.num_restarts:
        starts.append(np.concatenate([
            rng.uniform(0.0, 1.0, n),
            rng.uniform(layout.floor, np.maximum(pair_cap, layout.floor)),
            rng.uniform(0.0, layout.sigma_hi),
        ]))
    return [layout.project(x) for x in starts[:opts.num_restarts]]


def _better(candidate: RunResult, best: Optional[RunResult]) -> bool:
    if best is None:
        return True
    scale = 1e-12 * max(1.0, abs(best.objective))
    if candidate.objective < best.objective - scale:
        return True
    if candidate.objective <= best.objective + scale:
        return tuple(candidate.x) < tuple(best.x)
    return False


def multistart(objective: ScalarizedObjective, opts: SolverOptions, starts=None) -> Tuple[RunResult, int]:
    """Best run over the start points; raises SolverError when none has a finite objective."""
    layout = objective.layout
    if starts is None:
        starts = start_points(layout, opts)
    best = None
    used = 0
    for k, x0 in enumerate(starts):
        used += 1
        run = minimize_projected(objective.value, objective.gradient, layout.project, x0, opts)
        logging.debug("multistart() restart {} objective {} converged {} after {} iterations".format(
            k, run.objective, run.converged, run.iterations))
        if not np.isfinite(run.objective):
            continue
        if _better(run, best):
            best = run
    if best is None:
        raise SolverError("every restart produced a non-finite objective")
    return best, used


def polish_discounts(layout: TradeLayout, inst: MarketInstance, x) -> np.ndarray:
    """Raises sigma just enough that p(1 - alpha sigma) does not exceed the PCC sell price."""
    x = np.array(x, dtype=float)
    alpha = layout.alpha
    if alpha <= 0 or layout.n == 0:
        return x
    t, _, sigma = layout.split(x)
    p = layout.prices(t)
    pi = inst.pcc_sell_price[layout.loads]
    needed = np.where(p > pi, (1.0 - pi / p) / alpha, 0.0)
    sigma[:] = np.maximum(sigma, np.minimum(layout.sigma_hi, needed))
    return x


def kkt_residual(inst: MarketInstance, lam, solution: Solution) -> float:
    """
    Max projected-gradient component over the movable variables; 0 at a first-order stationary point.

    Prices enter through their window position, so the price components are
    measured per window width.
    """
    weights = as_weights(lam, inst)
    layout = build_layout(inst, slack_floor=EPS if solution.surrogate else 0.0)
    if layout.n == 0:
        return 0.0
    objective = ScalarizedObjective(inst, weights, layout, surrogate=solution.surrogate)
    x = layout.from_state(solution.state)
    return projected_residual(x, objective.gradient(x), layout.project)


def finish_solution(
        inst: MarketInstance,
        weights: Weights,
        layout: TradeLayout,
        x,
        surrogate: bool,
        converged: bool,
        iterations: int,
        restarts_used: int,
        note: str = "") -> Solution:
    """Polished, feasibility-reconciled Solution for a layout point."""
    x = polish_discounts(layout, inst, x)
    state = layout.to_state(inst, x)
    solution = Solution(
        state=state,
        objective=scalarized_objective(inst, weights, state, surrogate=surrogate),
        objective_parts=evaluate_objectives(inst, state),
        kkt_residual=0.0,
        converged=converged,
        iterations=iterations,
        restarts_used=restarts_used,
        surrogate=surrogate,
        note=note,
    )
    solution.kkt_residual = kkt_residual(inst, weights, solution)
    edges = edge_trades(inst, state)
    if edges:
        logging.debug("finish_solution() trades on a price window edge: {}".format(edges))
    return solution


def baseline_solution(inst: MarketInstance, weights: Weights, surrogate: bool = False) -> Solution:
    state = baseline_state(inst)
    note = ""
    if np.any(weights.pcc > 0) and np.any(inst.target_demand > 0):
        note = "target unreachable"
    return Solution(
        state=state,
        objective=scalarized_objective(inst, weights, state, surrogate=surrogate),
        objective_parts=evaluate_objectives(inst, state),
        kkt_residual=0.0,
        converged=True,
        iterations=0,
        restarts_used=0,
        surrogate=surrogate,
        note=note,
    )


def solve_scalarized(
        inst: MarketInstance,
        lam,
        opts: Optional[SolverOptions] = None,
        surrogate: bool = False,
        warm: Optional[TradeState] = None) -> Solution:
    """
    Minimizes the scalarized objective (or its Jensen surrogate) over all feasible states.

    :param inst: a validated market instance
    :param lam: Weights, a length G+2L array on the simplex, or "default"
    :param opts: solver options
    :param surrogate: minimize the separable surrogate instead of the log-of-sum form
    :param warm: a nearby solution, tried before the regular start points
    :return: the best feasible Solution found
    """
    opts = opts or SolverOptions()
    weights = as_weights(lam, inst)
    layout = build_layout(inst, floor=opts.floor, slack_floor=EPS if surrogate else 0.0)
    if layout.n == 0:
        logging.debug("solve_scalarized() no tradable pairs, returning baseline")
        return baseline_solution(inst, weights, surrogate)

    objective = ScalarizedObjective(inst, weights, layout, surrogate=surrogate)
    starts = start_points(layout, opts)
    if warm is not None:
        starts = [layout.from_state(warm)] + starts
    best, used = multistart(objective, opts, starts)
    solution = finish_solution(inst, weights, layout, best.x, surrogate, best.converged, best.iterations, used)
    if not solution.converged:
        logging.warning("solve_scalarized() did not converge, kkt residual {}".format(solution.kkt_residual))
    return solution


def _axis(low, high, count):
    if count == 1:
        return np.array([(low + high) / 2.0])
    return np.linspace(low, high, count)


def brute_force_oracle(
        inst: MarketInstance,
        lam,
        grid_per_axis: int,
        surrogate: bool = False) -> Tuple[TradeState, float]:
    """
    Exhaustive grid search over the (price, d, sigma) axes of at most two tradable pairs.

    Price axes span each pair's window and demand axes start at zero so the
    no-trade point is on the grid.
    """
    if grid_per_axis < 1:
        raise ValueError("grid_per_axis must be at least 1")
    weights = as_weights(lam, inst)
    layout = build_layout(inst, floor=0.0, slack_floor=EPS if surrogate else 0.0)
    if layout.n > 2:
        raise ValueError("brute_force_oracle() supports at most 2 tradable pairs, got {}".format(layout.n))
    if layout.n == 0:
        state = baseline_state(inst)
        return state, scalarized_objective(inst, weights, state, surrogate=surrogate)

    objective = ScalarizedObjective(inst, weights, layout, surrogate=surrogate)
    n = layout.n
    pair_cap = np.array([min(inst.surplus[i], inst.demand[j]) for i, j in zip(layout.ders, layout.loads)])
    t_axes = [_axis(0.0, 1.0, grid_per_axis) for _ in range(n)]
    d_axes = [_axis(0.0, pair_cap[k], grid_per_axis) for k in range(n)]
    s_axes = [_axis(0.0, layout.sigma_hi[k], grid_per_axis) for k in range(n)]
    mesh = np.stack([m.ravel() for m in np.meshgrid(*(d_axes + s_axes), indexing="ij")], axis=1)

    D = mesh[:, :n]
    feasible = np.ones(len(mesh), dtype=bool)
    for group in layout.der_groups + layout.load_groups:
        feasible &= D[:, group.positions].sum(axis=1) <= group.cap + 1e-12 * max(group.cap, 1.0)
    mesh = mesh[feasible]

    best_x, best_f = None, np.inf
    for position in itertools.product(*t_axes):
        X = np.concatenate([np.tile(position, (len(mesh), 1)), mesh], axis=1)
        values = objective.value_batch(X)
        k = int(np.argmin(values))
        if values[k] < best_f:
            best_f, best_x = values[k], X[k]
    if best_x is None:
        raise SolverError("no grid point has a finite objective")
    state = layout.to_state(inst, best_x, zero_below=0.0)
    return state, scalarized_objective(inst, weights, state, surrogate=surrogate)


def _sweep_point(point, weights, lam_index, opts, solver, partition, rho, surrogate, warm=None):
    """Record for one alpha, plus the state the next alpha may warm-start from."""
    alpha = point.discount_cap
    try:
        if solver == "admm":
            from gridmarket.admm import AdmmOptions, admm_solve
            solution, _ = admm_solve(point, weights, partition, opts=AdmmOptions(rho=rho, inner=opts))
        elif warm is not None:
            trimmed = replace(opts, num_restarts=min(opts.num_restarts, WARM_RESTARTS))
            solution = solve_scalarized(point, weights, trimmed, surrogate=surrogate, warm=warm)
        else:
            solution = solve_scalarized(point, weights, opts, surrogate=surrogate)
    except SolverError as e:
        logging.warning("pareto_sweep() alpha {} failed: {}".format(alpha, e))
        nan = float("nan")
        return SweepRecord(alpha, nan, nan, nan, nan, False, lam_index, str(e)), None
    if not solution.converged:
        logging.warning("pareto_sweep() alpha {} did not converge".format(alpha))
    record = SweepRecord(
        alpha=float(alpha),
        der_gain_pct=der_gain(point, solution.state),
        load_gain_pct=load_gain(point, solution.state),
        distance=report_distance(point, solution.state),
        objective=solution.objective,
        converged=solution.converged,
        lambda_index=lam_index,
        note=solution.note,
    )
    return record, solution.state


def _sweep_segment(inst, weights, lam_index, alphas, opts, solver, partition, rho, surrogate) -> List[SweepRecord]:
    records = []
    warm = None
    for alpha in alphas:
        record, warm = _sweep_point(
            inst.with_discount_cap(alpha), weights, lam_index, opts, solver, partition, rho, surrogate, warm)
        records.append(record)
    return records


def _run_segment(task) -> List[SweepRecord]:
    return _sweep_segment(*task)


def pareto_sweep(
        inst: MarketInstance,
        lam_list: Sequence,
        alpha_list: Sequence[float],
        opts: Optional[SolverOptions] = None,
        solver: str = "central",
        partition=None,
        rho: float = 1.0,
        jobs: int = 1,
        surrogate: bool = False) -> List[SweepRecord]:
    """
    One record per (lambda, alpha) point, ordered by lambda then alpha.

    Alphas are cut into fixed segments of SEGMENT points. Within a segment each
    central solve starts from the previous alpha's solution next to a trimmed
    set of cold starts; segments run in a process pool when jobs > 1 and give
    the same records as a serial run.
    """
    opts = opts or SolverOptions()
    if solver not in ("central", "admm"):
        raise ValueError("unknown solver {!r}".format(solver))
    alphas = [float(a) for a in alpha_list]
    for alpha in alphas:
        if not 0.0 <= alpha <= 1.0:
            raise ValueError("alpha out of [0,1]: {}".format(alpha))
    weights = [as_weights(lam, inst) for lam in lam_list]
    tasks = [
        (inst, w, k, alphas[start:start + SEGMENT], opts, solver, partition, rho, surrogate)
        for k, w in enumerate(weights)
        for start in range(0, len(alphas), SEGMENT)
    ]

    logging.debug("pareto_sweep() {} points in {} segments on {} workers".format(
        len(weights) * len(alphas), len(tasks), jobs))
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as pool:
            segments = list(pool.map(_run_segment, tasks))
    else:
        segments = [_run_segment(task) for task in tasks]
    return [record for segment in segments for record in segment]


def solution_to_dict(solution: Solution) -> dict:
    return {
        "state": solution.state.to_dict(),
        "objective": solution.objective,
        "objective_parts": solution.objective_parts.to_dict(),
        "kkt_residual": solution.kkt_residual,
        "converged": bool(solution.converged),
        "iterations": int(solution.iterations),
        "restarts_used": int(solution.restarts_used),
        "surrogate": bool(solution.surrogate),
        "note": solution.note,
    }
