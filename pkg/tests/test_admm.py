from dataclasses import replace
import numpy as np
import pandas as pd
import pytest

from gridmarket.admm import (
    AdmmOptions,
    admm_solve,
    partition_by_branch,
    residual_trace,
    split_objective,
    write_trace_csv,
)
from gridmarket.config import TOL_ZERO
from gridmarket.model import MarketInstance, check_feasible
from gridmarket.solver import SolverOptions, default_lambda, solve_scalarized
from gridmarket.transform import ScalarizedObjective, Weights
from conftest import random_instance


def _with_regions(inst, regions):
    return replace(inst, region_of_agent=np.array(regions))


class TestPartition:
    def test_single_region(self, two_by_two):
        partition = partition_by_branch(_with_regions(two_by_two, [1, 1, 1, 1]))
        assert partition.num_regions == 1

    def test_two_regions(self, two_by_two):
        partition = partition_by_branch(two_by_two)
        assert partition.num_regions == 2
        assert list(partition.ders(0)) == [0]
        assert list(partition.loads(1)) == [1]

    def test_missing_regions(self, two_by_two):
        with pytest.raises(ValueError):
            partition_by_branch(replace(two_by_two, region_of_agent=None))

    @pytest.mark.parametrize("regions", [[1, 3, 1, 3], [0, 1, 1, 1], [1, 2, 1]])
    def test_invalid_ids(self, two_by_two, regions):
        with pytest.raises(ValueError):
            partition_by_branch(_with_regions(two_by_two, regions))


class TestSplitObjective:
    def test_terms_reassemble(self):
        rng = np.random.default_rng(4)
        inst = _with_regions(random_instance(rng, 2, 2), [1, 2, 2, 1])
        w = default_lambda(2, 2)
        split = split_objective(inst, w, partition_by_branch(inst))
        layout = split.layout
        full = ScalarizedObjective(inst, w, layout, surrogate=True)
        for _ in range(20):
            x = np.concatenate([
                rng.uniform(0.0, 1.0, layout.n),
                rng.uniform(0.5, 1.5, layout.n),
                rng.uniform(0.0, 1.0, layout.n),
            ])
            parts = [ScalarizedObjective(inst, w, layout, surrogate=True, terms=t).value(x) for t in split.local]
            parts.append(ScalarizedObjective(inst, w, layout, surrogate=True, terms=split.cross).value(x))
            assert sum(parts) == pytest.approx(full.value(x), abs=1e-10)

    def test_single_region_has_no_cross_terms(self, two_by_two):
        inst = _with_regions(two_by_two, [1, 1, 1, 1])
        split = split_objective(inst, default_lambda(2, 2), partition_by_branch(inst))
        assert not split.cross.pair_der.any()
        assert split.local[0].pair_der.all()

    def test_cross_only_trade(self):
        inst = MarketInstance.create([10.0], [5.0], [20.0], [50.0], [80.0], 0.3, [[2.0]], region_of_agent=[1, 2])
        split = split_objective(inst, default_lambda(1, 1), partition_by_branch(inst))
        assert list(split.cross.pair_der) == [True]
        assert not any(t.pair_der.any() for t in split.local)
        assert list(split.local[0].der_slack) == [0]
        assert list(split.local[1].pcc_loads) == [0]


class TestAdmmSolve:
    def test_single_region_matches_central(self, two_by_two, fast_opts):
        inst = _with_regions(two_by_two, [1, 1, 1, 1])
        w = default_lambda(2, 2)
        solution, trace = admm_solve(inst, w, opts=AdmmOptions(inner=fast_opts))
        central = solve_scalarized(inst, w, fast_opts, surrogate=True)
        # one region still iterates: local solve, global step, dual update
        assert len(trace) > 1
        assert solution.converged
        assert solution.objective == pytest.approx(central.objective, abs=1e-8)

    def test_two_regions_match_central(self, two_by_two):
        w = default_lambda(2, 2)
        inner = SolverOptions(max_iter=500, num_restarts=3)
        solution, trace = admm_solve(two_by_two, w, opts=AdmmOptions(max_iter=300, inner=inner))
        central = solve_scalarized(two_by_two, w, inner, surrogate=True)
        assert solution.converged
        assert trace[-1].primal_residual < 1e-6
        assert trace[-1].dual_residual < 1e-6
        assert check_feasible(two_by_two, solution.state) == []
        assert solution.objective == pytest.approx(central.objective, abs=1e-4)
        np.testing.assert_array_equal(
            solution.state.traded() > TOL_ZERO, central.state.traded() > TOL_ZERO)

    def test_two_regions_without_load_weights(self, two_by_two):
        w = Weights.create([0.2, 0.2, 0.0, 0.0, 0.3, 0.3], 2, 2)
        inner = SolverOptions(max_iter=500, num_restarts=3)
        solution, _ = admm_solve(two_by_two, w, opts=AdmmOptions(max_iter=300, inner=inner))
        central = solve_scalarized(two_by_two, w, inner, surrogate=True)
        assert solution.converged
        assert solution.objective == pytest.approx(central.objective, abs=1e-4)

    def test_coupled_run_is_feasible(self, two_by_two):
        opts = AdmmOptions(max_iter=15, inner=SolverOptions(max_iter=200))
        solution, trace = admm_solve(two_by_two, "default", opts=opts)
        assert check_feasible(two_by_two, solution.state) == []
        assert 1 <= len(trace) <= 15
        assert solution.iterations == len(trace)
        assert all(np.isfinite(t.objective) for t in trace)

    def test_parallel_regions_match_serial(self, two_by_two):
        inner = SolverOptions(max_iter=200)
        serial, _ = admm_solve(two_by_two, "default", opts=AdmmOptions(max_iter=5, inner=inner))
        parallel, _ = admm_solve(two_by_two, "default", opts=AdmmOptions(max_iter=5, inner=inner, jobs=2))
        assert serial.objective == parallel.objective

    def test_larger_rho_still_finite(self, two_by_two):
        inner = SolverOptions(max_iter=200)
        for rho in (1.0, 10.0):
            _, trace = admm_solve(two_by_two, "default", rho=rho, opts=AdmmOptions(max_iter=5, inner=inner))
            assert all(np.isfinite(dual) for _, dual in residual_trace(trace))

    def test_rejects_nonpositive_rho(self, two_by_two):
        with pytest.raises(ValueError):
            admm_solve(two_by_two, "default", rho=0.0)
        with pytest.raises(ValueError):
            AdmmOptions(rho=-1.0)


class TestTrace:
    def test_empty_trace(self):
        with pytest.raises(ValueError):
            residual_trace([])

    def test_csv(self, two_by_two, tmp_path):
        _, trace = admm_solve(two_by_two, "default", opts=AdmmOptions(max_iter=3, inner=SolverOptions(max_iter=100)))
        path = tmp_path / "trace.csv"
        write_trace_csv(trace, str(path))
        assert path.read_text().splitlines()[0] == "iteration,primal_residual,dual_residual,objective"
        frame = pd.read_csv(path)
        assert list(frame.iteration) == [t.iteration for t in trace]
