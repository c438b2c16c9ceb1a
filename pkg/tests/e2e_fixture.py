"""Workspace builder for full-pipeline runs on a 12-problem toy corpus.

Three problem families share identical extraction payloads, so the mock
embedder maps each family onto one point and clustering recovers the
families exactly.  Chat and executor scenarios are laid out positionally
to match the phase call order; the eval scenario is written only after
learn has produced the library, because its selection responses must name
real skill ids.
"""

from __future__ import annotations

import json
import os

import yaml

from archskills.archetype import ArchetypeExtraction, Ingredients, build_representation
from archskills.config import ProblemInstance, split_dataset
from archskills.clustering import dbscan
from archskills.providers import MockEmbeddingProvider
from archskills.rollout import default_catalog
from archskills.skills import load_library
from archskills.store import write_jsonl

from conftest import (
    extraction_payload,
    eval_decision_payload,
    decision_payload,
    analysis_payload,
    make_skill_doc,
    rec_text,
    rec_tool,
    selection_payload,
)

CLOCK_EPOCH = 1_700_000_000.0
EMBED_DIM = 16

FAMILIES = {
    "transport": dict(
        variables=("shipment_quantity",),
        constraints=("supply_limit", "demand_requirement"),
        objectives=("minimize_transport_cost",),
        edited="Route shipments from depots to stores at minimum total cost.",
    ),
    "knapsack": dict(
        variables=("item_selection",),
        constraints=("weight_capacity",),
        objectives=("maximize_total_value",),
        edited="Choose items to maximize value within the weight budget.",
    ),
    "scheduling": dict(
        variables=("shift_assignment",),
        constraints=("coverage_requirement", "max_weekly_hours"),
        objectives=("minimize_staffing_cost",),
        edited="Assign workers to shifts covering demand at minimum cost.",
    ),
}

FAMILY_ORDER = list(FAMILIES)


def family_of(index: int) -> str:
    return FAMILY_ORDER[index % len(FAMILY_ORDER)]


def train_problems() -> list[ProblemInstance]:
    problems = []
    for index in range(12):
        family = family_of(index)
        problems.append(
            ProblemInstance(
                problem_id=f"p{index + 1:02d}",
                problem=f"[{family} narrative {index + 1}] "
                + FAMILIES[family]["edited"],
                answer=10.0 + index,
                benchmark="train",
            )
        )
    return problems


def eval_problems() -> list[ProblemInstance]:
    specs = [
        ("pe1", "transport", "alpha", 101.0, True),
        ("pe2", "knapsack", "beta", 102.0, True),
        ("pe3", "scheduling", "beta", 103.0, True),
        ("pe4", "transport", "beta", 104.0, False),
    ]
    return [
        ProblemInstance(
            problem_id=pid,
            problem=f"[{family} eval task] " + FAMILIES[family]["edited"],
            answer=answer,
            benchmark=benchmark,
        )
        for pid, family, benchmark, answer, _ in specs
    ]


EVAL_CORRECT = {"pe1": True, "pe2": True, "pe3": True, "pe4": False}


def family_extraction(family: str) -> str:
    spec = FAMILIES[family]
    return extraction_payload(
        variables=spec["variables"],
        constraints=spec["constraints"],
        objectives=spec["objectives"],
        edited=spec["edited"],
    )


def family_of_problem(problem: ProblemInstance) -> str:
    return problem.problem.split(" ")[0].strip("[")


def fused_point(family: str, embedder: MockEmbeddingProvider):
    spec = FAMILIES[family]
    extraction = ArchetypeExtraction(
        ingredients=Ingredients.from_lists(
            list(spec["variables"]), list(spec["constraints"]), list(spec["objectives"])
        ),
        edited_problem=spec["edited"],
        confidence=0.9,
    )
    return build_representation(extraction, embedder=embedder, alpha=0.55).fused


def _episode_records(value: float, scripted: bool, observations: list) -> list:
    """One agent episode; scripted episodes run a tool call first."""
    if not scripted:
        return [rec_text(f"<answer>{value}</answer>")]
    observations.append(
        {
            "stdout": f"RESULT: {value}\n",
            "stderr": "",
            "exit_status": 0,
            "wall_time": 0.05,
            "timed_out": False,
        }
    )
    return [
        rec_tool("Formulating, then solving.", f"print('RESULT: {value}')"),
        rec_text(f"<tmp>{value}</tmp>\n<answer>{value}</answer>"),
    ]


def build_workspace(root) -> dict:
    """Write datasets, scenarios, and configs under ``root``.

    Returns the expectation table the tests assert against.
    """
    root = os.fspath(root)
    os.makedirs(root, exist_ok=True)
    problems = train_problems()
    write_jsonl(os.path.join(root, "problems.jsonl"), [p.to_record() for p in problems])
    write_jsonl(
        os.path.join(root, "eval_problems.jsonl"),
        [p.to_record() for p in eval_problems()],
    )

    discover_split, learn_split = split_dataset(problems, 42, 0.5)
    catalog_ids = default_catalog().ids()[:3]

    # Discover: extract, select, three episodes (two correct, one wrong),
    # then per-trajectory analyses ordered positives first.  The first
    # problem runs tool-call episodes so the scripted executor is part of
    # the phase; the rest answer immediately.
    discover_chat: list = []
    discover_obs: list = []
    for position, problem in enumerate(discover_split):
        discover_chat.append(rec_text(family_extraction(family_of_problem(problem))))
        discover_chat.append(rec_text(selection_payload(catalog_ids)))
        scripted = position == 0
        answer = problem.answer
        discover_chat += _episode_records(answer, scripted, discover_obs)
        discover_chat += _episode_records(answer, scripted, discover_obs)
        discover_chat += _episode_records(answer + 1.0, scripted, discover_obs)
        discover_chat.append(rec_text(analysis_payload("positive")))
        discover_chat.append(rec_text(analysis_payload("positive")))
        discover_chat.append(rec_text(analysis_payload("negative")))

    embedder = MockEmbeddingProvider(dimension=EMBED_DIM)
    points = [fused_point(family_of_problem(p), embedder) for p in discover_split]
    assignment = dbscan(points, 0.05, 1).canonical()
    for cluster in range(assignment.cluster_count):
        discover_chat.append(
            rec_text(make_skill_doc(name=f"seed-skill-{cluster}", workflows=1))
        )
    write_jsonl(os.path.join(root, "chat_discover.jsonl"), discover_chat)
    write_jsonl(os.path.join(root, "exec_discover.jsonl"), discover_obs)

    # Learn: every recall is rejected so the step never depends on skill
    # ids; positions 0 and 3 expand, the rest produce no positive.
    expand_positions = {0, 3}
    learn_chat: list = []
    for position, problem in enumerate(learn_split):
        learn_chat.append(rec_text(family_extraction(family_of_problem(problem))))
        learn_chat.append(rec_text(decision_payload("reject")))
        learn_chat.append(rec_text(selection_payload(catalog_ids)))
        answer = problem.answer
        if position in expand_positions:
            for _ in range(3):
                learn_chat += _episode_records(answer, False, [])
            learn_chat.append(rec_text(analysis_payload("positive")))
            learn_chat.append(rec_text(analysis_payload("positive")))
            learn_chat.append(rec_text(analysis_payload("positive")))
            learn_chat.append(
                rec_text(make_skill_doc(name=f"learned-skill-{position}", workflows=1))
            )
        else:
            learn_chat += _episode_records(answer + 1.0, False, [])
            learn_chat += _episode_records(answer + 2.0, False, [])
            learn_chat += _episode_records(answer + 3.0, False, [])
    write_jsonl(os.path.join(root, "chat_learn.jsonl"), learn_chat)
    write_jsonl(os.path.join(root, "exec_learn.jsonl"), [])
    write_jsonl(os.path.join(root, "exec_eval.jsonl"), [])

    library_dir = os.path.join(root, "library")
    for phase in ("discover", "learn", "eval"):
        payload = {
            "dataset": os.path.join(root, "problems.jsonl"),
            "eval_dataset": os.path.join(root, "eval_problems.jsonl"),
            "library_dir": library_dir,
            "runs_dir": os.path.join(root, "runs"),
            "clock_epoch": CLOCK_EPOCH,
            "chat": {
                "kind": "mock",
                "scenario": os.path.join(root, f"chat_{phase}.jsonl"),
            },
            "embedding": {"kind": "mock", "dimension": EMBED_DIM},
            "executor": {
                "kind": "scripted",
                "scenario": os.path.join(
                    root, "exec_discover.jsonl" if phase == "discover" else f"exec_{phase}.jsonl"
                ),
            },
        }
        with open(os.path.join(root, f"{phase}.yaml"), "w", encoding="utf-8") as fh:
            yaml.safe_dump(payload, fh, sort_keys=True)

    clusters = assignment.cluster_count
    return {
        "library_dir": library_dir,
        "discover": {
            "problems": len(discover_split),
            "failed_problems": 0,
            "clusters": clusters,
            "noise_points": 0,
            "skills_built": clusters,
            "library_version": clusters,
            "positive_trajectories": 2 * len(discover_split),
            "negative_trajectories": len(discover_split),
        },
        "learn": {
            "problems": len(learn_split),
            "refined": 0,
            "expanded": 2,
            "unchanged": 4,
            "version_before": clusters,
            "version_after": clusters + 2,
            "skills": clusters + 2,
        },
        "eval": {
            "micro": 3 / 4,
            "macro": sum([1 / 1, 2 / 3]) / 2,
        },
    }


def write_eval_scenario(root) -> None:
    """Script the eval consults against the skill ids learn produced."""
    root = os.fspath(root)
    library = load_library(os.path.join(root, "library"))
    skill_ids = sorted(skill.skill_id for skill in library.skills())
    chosen = skill_ids[0]
    records = []
    for problem in eval_problems():
        records.append(rec_text(family_extraction(family_of_problem(problem))))
        records.append(rec_text(eval_decision_payload(chosen)))
        answer = problem.answer if EVAL_CORRECT[problem.problem_id] else problem.answer + 1.0
        records.append(rec_text(f"<answer>{answer}</answer>"))
    write_jsonl(os.path.join(root, "chat_eval.jsonl"), records)
