"""Reference solver runs and tiny exhaustive oracles.

Every reference script executes through the sandbox's subprocess
executor, so a passing run proves a real interpreter and a real solver
backend produced the reported optimum. Backends absent from the
environment surface as BackendMissing, which callers treat as a skip
with a report rather than a failure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from importlib import util as importlib_util
from importlib.resources import files as resource_files
from itertools import permutations

from archskills.evaluation import MatchTolerance, answers_match
from archskills.sandbox import (
    ExecutionLimits,
    ExecutionObservation,
    SubprocessExecutor,
)


class BackendMissing(RuntimeError):
    """The named solver backend is not importable in this environment."""


class SpaceTooLarge(ValueError):
    """Exhaustive enumeration would exceed the search budget."""


ENUMERATION_BUDGET = 2**20

# Backend name -> module whose presence marks the backend as installed.
# HiGHS ships inside scipy.optimize; GLPK rides along with cvxopt builds
# that enable it; CBC needs the python-mip wheel.
BACKEND_PROBES = {
    "highs": "scipy.optimize",
    "glpk": "cvxopt.glpk",
    "cbc": "mip",
}


def backend_available(backend: str) -> bool:
    probe = BACKEND_PROBES.get(backend)
    if probe is None:
        return False
    try:
        return importlib_util.find_spec(probe) is not None
    except (ImportError, ValueError):
        return False


@dataclass(frozen=True)
class ReferenceProblem:
    """A known-answer solver script tied to one backend."""

    name: str
    script: str
    known_optimum: float
    backend: str

    def __post_init__(self) -> None:
        if not self.name.strip():
            raise ValueError("reference problem needs a name")
        if not self.script.strip():
            raise ValueError("reference problem needs a script")
        if not math.isfinite(self.known_optimum):
            raise ValueError("known optimum must be finite")
        if not self.backend.strip():
            raise ValueError("reference problem needs a backend")


def fixture_text(filename: str) -> str:
    return (resource_files("solver_harness") / "fixtures" / filename).read_text(
        encoding="utf-8"
    )


def reference_problems() -> tuple[ReferenceProblem, ...]:
    return (
        ReferenceProblem("lp_corner", fixture_text("lp_highs.py"), 5.0, "highs"),
        ReferenceProblem(
            "knapsack_highs", fixture_text("knapsack_highs.py"), 7.0, "highs"
        ),
        ReferenceProblem(
            "knapsack_glpk", fixture_text("knapsack_glpk.py"), 7.0, "glpk"
        ),
        ReferenceProblem("knapsack_cbc", fixture_text("knapsack_cbc.py"), 7.0, "cbc"),
    )


def observe_reference_problem(
    problem: ReferenceProblem,
    limits: ExecutionLimits | None = None,
    executor=None,
) -> ExecutionObservation:
    """Run the script in a child interpreter and return the raw observation."""
    if not backend_available(problem.backend):
        raise BackendMissing(
            f"backend '{problem.backend}' is not installed "
            f"(probe module: {BACKEND_PROBES.get(problem.backend)})"
        )
    runner = executor if executor is not None else SubprocessExecutor()
    return runner.execute_script(problem.script, limits or ExecutionLimits())


def run_reference_problem(
    problem: ReferenceProblem,
    limits: ExecutionLimits | None = None,
    executor=None,
) -> float | None:
    """Return the parsed RESULT value, or None when the script reports none."""
    return observe_reference_problem(problem, limits, executor).parsed_result


@dataclass(frozen=True)
class KnapsackInstance:
    """0/1 knapsack: pick items maximizing value within the capacity."""

    items: tuple[tuple[float, float], ...]
    capacity: float

    def __post_init__(self) -> None:
        for weight, value in self.items:
            if not (math.isfinite(weight) and math.isfinite(value)):
                raise ValueError("item weights and values must be finite")
        if not math.isfinite(self.capacity):
            raise ValueError("capacity must be finite")


@dataclass(frozen=True)
class AssignmentInstance:
    """Square assignment: one worker per task, minimizing total cost."""

    costs: tuple[tuple[float, ...], ...]

    def __post_init__(self) -> None:
        for row in self.costs:
            if len(row) != len(self.costs):
                raise ValueError("cost matrix must be square")
            for cost in row:
                if not math.isfinite(cost):
                    raise ValueError("costs must be finite")


def _knapsack_optimum(instance: KnapsackInstance) -> float:
    n = len(instance.items)
    if 2**n > ENUMERATION_BUDGET:
        raise SpaceTooLarge(f"2^{n} subsets exceed the enumeration budget")
    best = 0.0
    for mask in range(2**n):
        weight = 0.0
        value = 0.0
        for index, (item_weight, item_value) in enumerate(instance.items):
            if mask >> index & 1:
                weight += item_weight
                value += item_value
        if weight <= instance.capacity:
            best = max(best, value)
    return best


def _assignment_optimum(instance: AssignmentInstance) -> float:
    n = len(instance.costs)
    if n == 0:
        return 0.0
    if math.factorial(n) > ENUMERATION_BUDGET:
        raise SpaceTooLarge(f"{n}! permutations exceed the enumeration budget")
    return min(
        sum(instance.costs[row][assigned[row]] for row in range(n))
        for assigned in permutations(range(n))
    )


def brute_force_oracle(instance) -> float:
    """Exact optimum by exhaustive enumeration of a tiny instance."""
    if isinstance(instance, KnapsackInstance):
        return _knapsack_optimum(instance)
    if isinstance(instance, AssignmentInstance):
        return _assignment_optimum(instance)
    raise TypeError(f"no enumeration strategy for {type(instance).__name__}")


def agreement_report(
    problems: tuple[ReferenceProblem, ...] | None = None,
    tolerance: MatchTolerance | None = None,
    limits: ExecutionLimits | None = None,
) -> list[dict]:
    """Run every reference problem and report matched / mismatched / skipped."""
    rows = []
    for problem in problems if problems is not None else reference_problems():
        row = {
            "name": problem.name,
            "backend": problem.backend,
            "known_optimum": problem.known_optimum,
        }
        try:
            observed = run_reference_problem(problem, limits)
        except BackendMissing as exc:
            row["status"] = "skipped"
            row["detail"] = str(exc)
        else:
            row["observed"] = observed
            matched = observed is not None and answers_match(
                observed, problem.known_optimum, tolerance
            )
            row["status"] = "matched" if matched else "mismatched"
        rows.append(row)
    return rows
