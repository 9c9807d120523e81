import argparse
import json
import logging
import sys
from typing import List, Optional
import numpy as np
from gridmarket.config import *
from gridmarket.admm import AdmmOptions, admm_solve, partition_by_branch, write_trace_csv
from gridmarket.scenarios import (
    Scenario,
    atomic_write,
    builtin_scenario,
    load_scenario,
    records_frame,
    run_scenario,
    validate_scenario,
)
from gridmarket.solver import SolverOptions, solution_to_dict, solve_scalarized

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_NOT_CONVERGED = 2


class UsageError(ValueError):
    pass


class ArgumentParser(argparse.ArgumentParser):
    # argparse exits with 2 on bad flags, which is reserved for non-convergence here
    def error(self, message):
        raise UsageError("{}: {}".format(self.prog, message))


def parse_lambda(text: str):
    if text == "default":
        return "default"
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError("--lambda takes \"default\" or comma-separated numbers, got {!r}".format(text))


def build_parser() -> ArgumentParser:
    common = ArgumentParser(add_help=False)
    common.add_argument("--config", help="scenario config JSON")
    common.add_argument("--name", help="builtin scenario: {}".format(", ".join(BUILTIN_SCENARIOS)))
    common.add_argument("--out", help="output file; stdout when omitted")
    common.add_argument("--alpha", type=float, help="discount cap override")
    common.add_argument("--lambda", dest="lam", type=parse_lambda, help="\"default\" or G+2L comma-separated weights")
    common.add_argument("--tol", type=float, help="stationarity tolerance")
    common.add_argument("--max-iter", dest="max_iter", type=int, help="iteration limit")
    common.add_argument("--seed", type=int, help="multi-start seed (default GRIDMARKET_SEED)")
    common.add_argument("--solver", choices=["central", "admm"], help="solver override")
    common.add_argument("--rho", type=float, help="ADMM penalty")
    common.add_argument("--jobs", type=int, default=JOBS, help="sweep worker processes or ADMM region threads")
    common.add_argument("--strict", action="store_true", help="exit 2 when any solve does not converge")

    parser = ArgumentParser(prog="gridmarket", description="Multi-objective peer-to-peer energy market solver")
    parser.add_argument("--version", action="version", version=VERSION)
    sub = parser.add_subparsers(dest="command", parser_class=ArgumentParser)
    sub.required = True
    sub.add_parser("validate", parents=[common], help="check a scenario config")
    sub.add_parser("solve", parents=[common], help="solve one scalarized problem, write solution JSON")
    sub.add_parser("sweep", parents=[common], help="sweep the alpha grid, write CSV")
    sub.add_parser("admm", parents=[common], help="distributed solve, write solution JSON and trace CSV")
    sub.add_parser("scenario", parents=[common], help="run a builtin scenario, write CSV")
    return parser


def load(args) -> Scenario:
    if args.config:
        scenario = load_scenario(args.config)
    elif args.name:
        scenario = builtin_scenario(args.name)
    else:
        raise UsageError("one of --config or --name is required")

    overrides = {}
    instance = scenario.instance
    if args.alpha is not None:
        instance = instance.with_discount_cap(args.alpha)
    if args.lam is not None:
        overrides["lam"] = args.lam
    if args.solver is not None:
        overrides["solver"] = args.solver
    if args.rho is not None:
        overrides["rho"] = args.rho
    return Scenario(
        name=scenario.name,
        instance=instance,
        alpha_grid=scenario.alpha_grid if args.alpha is None else np.array([args.alpha]),
        lam=overrides.get("lam", scenario.lam),
        solver=overrides.get("solver", scenario.solver),
        rho=overrides.get("rho", scenario.rho),
        notes=scenario.notes,
    )


def solver_options(args) -> SolverOptions:
    kwargs = {"rng_seed": SEED if args.seed is None else args.seed}
    if args.tol is not None:
        kwargs["tol_grad"] = args.tol
    if args.max_iter is not None and args.command != "admm":
        kwargs["max_iter"] = args.max_iter
    return SolverOptions(**kwargs)


def emit_text(text: str, out: Optional[str]):
    if out is None:
        sys.stdout.write(text)
    else:
        def _write(tmp):
            with open(tmp, "w") as f:
                f.write(text)
        atomic_write(out, _write)


def dump_json(doc) -> str:
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def run(args) -> int:
    scenario = load(args)
    violations = validate_scenario(scenario)
    if violations:
        for v in violations:
            print(v, file=sys.stderr)
        return EXIT_INVALID
    if args.command == "validate":
        print("{}: valid".format(scenario.name))
        return EXIT_OK

    opts = solver_options(args)
    converged = True
    if args.command == "solve" and scenario.solver == "central":
        solution = solve_scalarized(scenario.instance, scenario.weights(), opts)
        emit_text(dump_json(solution_to_dict(solution)), args.out)
        converged = solution.converged
    elif args.command in ("solve", "admm"):
        admm_opts = AdmmOptions(
            max_iter=args.max_iter if args.max_iter is not None and args.command == "admm" else 300,
            tol=args.tol if args.tol is not None else TOL_ADMM,
            rho=scenario.rho,
            inner=SolverOptions(max_iter=500, tol_grad=opts.tol_grad, rng_seed=opts.rng_seed),
            jobs=args.jobs,
        )
        solution, trace = admm_solve(scenario.instance, scenario.weights(), partition_by_branch(scenario.instance),
                                     opts=admm_opts)
        emit_text(dump_json(solution_to_dict(solution)), args.out)
        if args.out is not None:
            write_trace_csv(trace, args.out + ".trace.csv")
        converged = solution.converged
    else:
        if args.command == "scenario" and not args.name:
            raise UsageError("scenario needs --name")
        records = run_scenario(scenario, opts, out=args.out, jobs=args.jobs)
        if args.out is None:
            sys.stdout.write(records_frame(records).to_csv(index=False, float_format="%.6g", na_rep="nan"))
        converged = all(r.converged for r in records)

    if args.strict and not converged:
        logging.warning("run() {} did not converge".format(args.command))
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    logging.basicConfig(
        filename=LOGFILE,
        level=LOG_LEVEL,
        datefmt="%Y-%m-%d %H:%M:%S",
        format="%(asctime)s %(levelname)s %(filename)s:%(lineno)s %(message)s",
    )
    try:
        args = build_parser().parse_args(argv)
        return run(args)
    except SystemExit as e:
        # --help and --version
        return int(e.code or 0)
    except (ValueError, OSError, argparse.ArgumentTypeError) as e:
        logging.debug(e)
        print("ERROR: " + str(e), file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
