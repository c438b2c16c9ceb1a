from .harness import (
    BACKEND_PROBES,
    ENUMERATION_BUDGET,
    AssignmentInstance,
    BackendMissing,
    KnapsackInstance,
    ReferenceProblem,
    SpaceTooLarge,
    agreement_report,
    backend_available,
    brute_force_oracle,
    fixture_text,
    observe_reference_problem,
    reference_problems,
    run_reference_problem,
)

__all__ = [
    "BACKEND_PROBES",
    "ENUMERATION_BUDGET",
    "AssignmentInstance",
    "BackendMissing",
    "KnapsackInstance",
    "ReferenceProblem",
    "SpaceTooLarge",
    "agreement_report",
    "backend_available",
    "brute_force_oracle",
    "fixture_text",
    "observe_reference_problem",
    "reference_problems",
    "run_reference_problem",
]
