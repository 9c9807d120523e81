"""
Scenario configs, the shipped experiments and sweep CSV emission.
"""
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Union
import json
import logging
import math
import os
import numpy as np
import pandas as pd
from gridmarket.config import BUILTIN_SCENARIOS, DATA_DIR
from gridmarket.model import (
    CSV_COLUMNS,
    MarketInstance,
    SweepRecord,
    Violation,
    ViolationKind,
    der_gain,
    load_gain,
    validate_instance,
)
from gridmarket.solver import SolverOptions, as_weights, pareto_sweep

REQUIRED_FIELDS = [
    "name",
    "surplus",
    "demand",
    "pcc_buy_price",
    "pcc_sell_price",
    "price_cap",
    "target_demand",
]
OPTIONAL_FIELDS = [
    "num_ders",
    "num_loads",
    "alpha_grid",
    "lambda",
    "regions",
    "solver",
    "discount_cap",
    "rho",
    "notes",
]
SOLVERS = ["central", "admm"]
DEFAULT_ALPHA_GRID = np.round(np.arange(10, 91) / 100.0, 2)


@dataclass(frozen=True)
class Scenario:
    name: str
    instance: MarketInstance
    alpha_grid: np.ndarray = field(default_factory=lambda: DEFAULT_ALPHA_GRID.copy())
    lam: Union[str, Sequence[float]] = "default"
    solver: str = "central"
    rho: float = 1.0
    notes: str = ""

    def weights(self):
        return as_weights(self.lam, self.instance)


def scenario_from_dict(doc: dict) -> Scenario:
    """
    Builds a Scenario from a parsed config document.

    Structural problems (unknown or missing fields, wrong types) raise
    ValueError. Invariant violations are left to validate_scenario().
    """
    if not isinstance(doc, dict):
        raise ValueError("scenario config must be a JSON object")
    unknown = sorted(set(doc) - set(REQUIRED_FIELDS) - set(OPTIONAL_FIELDS))
    if unknown:
        raise ValueError("unknown field(s): {}".format(", ".join(unknown)))
    missing = [f for f in REQUIRED_FIELDS if f not in doc]
    if missing:
        raise ValueError("missing field(s): {}".format(", ".join(missing)))

    try:
        alpha_grid = np.asarray(doc.get("alpha_grid", DEFAULT_ALPHA_GRID), dtype=float)
        discount_cap = float(doc.get("discount_cap", alpha_grid[0] if alpha_grid.size else 0.0))
        instance = MarketInstance.create(
            surplus=doc["surplus"],
            demand=doc["demand"],
            pcc_buy_price=doc["pcc_buy_price"],
            pcc_sell_price=doc["pcc_sell_price"],
            price_cap=doc["price_cap"],
            discount_cap=discount_cap,
            target_demand=doc["target_demand"],
            region_of_agent=doc.get("regions"),
            num_ders=doc.get("num_ders"),
            num_loads=doc.get("num_loads"),
        )
        rho = float(doc.get("rho", 1.0))
    except (TypeError, ValueError) as e:
        raise ValueError("malformed scenario field: {}".format(e))

    lam = doc.get("lambda", "default")
    if not (lam == "default" or isinstance(lam, list)):
        raise ValueError("lambda must be \"default\" or a list of weights")
    return Scenario(
        name=str(doc["name"]),
        instance=instance,
        alpha_grid=alpha_grid,
        lam=lam,
        solver=doc.get("solver", "central"),
        rho=rho,
        notes=str(doc.get("notes", "")),
    )


def validate_scenario(scenario: Scenario) -> List[Violation]:
    violations = validate_instance(scenario.instance)
    grid = scenario.alpha_grid
    if grid.ndim != 1 or grid.size == 0:
        violations.append(Violation(ViolationKind.VALUE, "alpha_grid must be a non-empty list"))
    else:
        if np.any(~np.isfinite(grid)) or np.any(grid < 0) or np.any(grid > 1):
            violations.append(Violation(ViolationKind.DISCOUNT_CAP, "alpha_grid entries out of [0,1]"))
        if np.any(np.diff(grid) <= 0):
            violations.append(Violation(ViolationKind.VALUE, "alpha_grid must be strictly increasing"))
    if scenario.solver not in SOLVERS:
        violations.append(Violation(ViolationKind.VALUE, "solver must be one of {}".format(", ".join(SOLVERS))))
    elif scenario.solver == "admm" and scenario.instance.region_of_agent is None:
        violations.append(Violation(ViolationKind.REGION, "admm solver needs regions"))
    if scenario.rho <= 0:
        violations.append(Violation(ViolationKind.VALUE, "rho must be positive"))
    if not violations:
        try:
            scenario.weights()
        except ValueError as e:
            violations.append(Violation(ViolationKind.VALUE, str(e)))
    return violations


def load_scenario(path: str) -> Scenario:
    logging.debug("load_scenario() {}".format(path))
    with open(path, "r") as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as e:
            raise ValueError("malformed JSON in {}: {}".format(path, e))
    return scenario_from_dict(doc)


def builtin_scenario(name: str) -> Scenario:
    if name not in BUILTIN_SCENARIOS:
        raise ValueError("unknown scenario {!r}, choose from {}".format(name, ", ".join(BUILTIN_SCENARIOS)))
    return load_scenario(os.path.join(DATA_DIR, name + ".json"))


def builtin_scenarios() -> List[Scenario]:
    """The tight, unbalanced tight and loose power offer experiments."""
    return [builtin_scenario(name) for name in BUILTIN_SCENARIOS]


def run_scenario(
        scenario: Scenario,
        opts: Optional[SolverOptions] = None,
        out: Optional[str] = None,
        jobs: int = 1) -> List[SweepRecord]:
    violations = validate_scenario(scenario)
    if violations:
        raise ValueError("invalid scenario {}: {}".format(scenario.name, "; ".join(str(v) for v in violations)))
    records = pareto_sweep(
        scenario.instance,
        [scenario.weights()],
        list(scenario.alpha_grid),
        opts,
        solver=scenario.solver,
        rho=scenario.rho,
        jobs=jobs,
    )
    if out is not None:
        write_records_csv(records, out)
    return records


def atomic_write(path: str, write):
    """Calls write(tmp_path) then moves the result over `path`."""
    tmp = "{}.tmp{}".format(path, os.getpid())
    try:
        write(tmp)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.remove(tmp)


def records_frame(records: Sequence[SweepRecord]) -> pd.DataFrame:
    return pd.DataFrame([{c: getattr(r, c) for c in CSV_COLUMNS} for r in records], columns=CSV_COLUMNS)


def write_records_csv(records: Sequence[SweepRecord], path: str):
    frame = records_frame(records)
    atomic_write(path, lambda tmp: frame.to_csv(tmp, index=False, float_format="%.6g", na_rep="nan"))


def read_records_csv(path: str) -> List[SweepRecord]:
    frame = pd.read_csv(path)
    if list(frame.columns) != CSV_COLUMNS:
        raise ValueError("unexpected CSV header: {}".format(",".join(frame.columns)))
    return [
        SweepRecord(
            alpha=float(row.alpha),
            der_gain_pct=float(row.der_gain_pct),
            load_gain_pct=float(row.load_gain_pct),
            distance=float(row.distance),
            objective=float(row.objective),
            converged=str(row.converged).lower() == "true",
        )
        for row in frame.itertuples(index=False)
    ]


def grid_minimizers(records: Sequence[SweepRecord], tie_tol: float = 1e-6) -> List[float]:
    """Alphas whose distance is within tie_tol of the smallest distance over the sweep."""
    distances = [r.distance for r in records if not math.isnan(r.distance)]
    if not distances:
        return []
    best = min(distances)
    return [r.alpha for r in records if not math.isnan(r.distance) and r.distance <= best + tie_tol]
