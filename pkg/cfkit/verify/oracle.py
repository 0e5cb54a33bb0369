"""Optimized-vs-naive operator sweeps."""

import logging
from typing import List, Optional, Sequence

import numpy as np

# registers every operator
import cfkit.verify.operators  # noqa: F401
from cfkit.registry import get_operator, get_registered_operators
from cfkit.types import OracleCase, OracleReport, OracleResult

logger = logging.getLogger(__name__)


def _max_abs_diff(a: np.ndarray, b: np.ndarray) -> float:
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        return float("inf")
    if a.size == 0:
        return 0.0
    diff = np.abs(a.astype(np.float64) - b.astype(np.float64))
    if not np.all(np.isfinite(diff)):
        return float("inf")
    return float(diff.max())


def run_case(case: OracleCase) -> OracleResult:
    """Run ``case.trials`` seeded trials; trial t draws from seed ``case.seed + t``."""
    operator = get_operator(case.op)
    dtype = np.dtype(case.dtype)
    worst, worst_seed, worst_shape = -1.0, case.seed, []
    for t in range(case.trials):
        seed = case.seed + t
        args = operator.sample(np.random.default_rng(seed), dtype, case.values)
        diff = _max_abs_diff(operator.optimized(*args), operator.reference(*args))
        if diff > worst:
            worst, worst_seed, worst_shape = diff, seed, operator.shape_of(args)
    passed = worst < case.tolerance
    result = OracleResult(
        op=case.op,
        values=case.values,
        trials=case.trials,
        worst_diff=worst,
        worst_seed=worst_seed,
        worst_shape=worst_shape,
        passed=passed,
    )
    if passed:
        logger.info("oracle %s (%s): %d trials, worst diff %.3g", case.op, case.values, case.trials, worst)
    else:
        logger.warning(
            "oracle %s (%s) FAILED: diff %.3g >= %.3g at seed %d, shape %s",
            case.op, case.values, worst, case.tolerance, worst_seed, worst_shape,
        )
    return result


def oracle_sweep(cases: Sequence[OracleCase]) -> OracleReport:
    """Run every case; the report passes only if every operator does."""
    results = [run_case(case) for case in cases]
    return OracleReport(passed=all(r.passed for r in results), results=results)


def default_cases(
    seed: int = 0,
    trials: int = 100,
    dtype: str = "float32",
    ops: Optional[List[str]] = None,
    values: Sequence[str] = ("gaussian", "dyadic"),
) -> List[OracleCase]:
    """One case per registered operator (or per name in ``ops``) and value kind."""
    tolerance = 1e-6 if dtype == "float32" else 1e-12
    return [
        OracleCase(op=op, seed=seed, trials=trials, tolerance=tolerance, dtype=dtype, values=kind)
        for kind in values
        for op in (ops or get_registered_operators())
    ]


def describe_failure(report: OracleReport) -> str:
    """One line per failing operator: op, value kind, seed and shape to reproduce it."""
    return "\n".join(
        f"{r.op} ({r.values}): worst diff {r.worst_diff:.3g} at seed {r.worst_seed}, shape {r.worst_shape}"
        for r in report.results
        if not r.passed
    )
