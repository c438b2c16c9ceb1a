"""Solver-portfolio rollout: solver selection and the tool-calling agent loop.

A rollout episode alternates model turns and sandboxed code executions
under a strict protocol: at most one tool call per turn, solver scripts
must print ``RESULT:<number>``, intermediate best candidates ride in
``<tmp>`` tags, and only a numeric ``<answer>`` tag terminates the episode.
When turns run out, the last ``<tmp>`` value stands in as the candidate.
"""

from __future__ import annotations

import json
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

from .archetype import Ingredients
from .evaluation import MatchTolerance, answers_match
from .prompting import (
    ParseFailure,
    extract_json_object,
    render_template,
    request_with_repair,
)
from .providers import RUN_CODE_TOOL, ChatRequest, ProviderError
from .sandbox import ExecutionLimits, ExecutionObservation, parse_result_line

__all__ = [
    "SolverEntry",
    "SolverCatalog",
    "RolloutLimits",
    "TrajectoryStep",
    "Trajectory",
    "TrajectorySet",
    "MalformedSelection",
    "select_solvers",
    "run_agent_loop",
    "label_trajectory",
    "rollout_portfolio",
    "default_catalog",
    "ExecutionObservation",
    "parse_result_line",
]

NO_SKILL_PLACEHOLDER = (
    "No skill document is available for this task. Rely on the 3-stage guidance."
)

POSITIVE = "positive"
NEGATIVE = "negative"
UNRESOLVED = "unresolved"


class MalformedSelection(ValueError):
    """Solver selection output stayed unparseable after the repair retry."""


@dataclass(frozen=True)
class SolverEntry:
    """One framework/backend combination offered to the selector."""

    solver_id: str
    framework: str
    backend: str
    doc_path: str | None = None

    def __post_init__(self) -> None:
        if not self.solver_id or not self.framework or not self.backend:
            raise ValueError("solver entry fields must be non-empty")


@dataclass(frozen=True)
class SolverCatalog:
    entries: tuple[SolverEntry, ...]

    def __post_init__(self) -> None:
        ids = [entry.solver_id for entry in self.entries]
        if len(ids) != len(set(ids)):
            raise ValueError("solver_id values must be unique")

    def __len__(self) -> int:
        return len(self.entries)

    def ids(self) -> list[str]:
        return [entry.solver_id for entry in self.entries]

    def get(self, solver_id: str) -> SolverEntry:
        for entry in self.entries:
            if entry.solver_id == solver_id:
                return entry
        raise KeyError(f"unknown solver_id {solver_id!r}")

    def to_prompt_json(self) -> str:
        return json.dumps(
            [
                {"solver_id": e.solver_id, "framework": e.framework, "backend": e.backend}
                for e in self.entries
            ],
            ensure_ascii=False,
            indent=2,
        )

    @staticmethod
    def from_file(path) -> "SolverCatalog":
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
        entries = tuple(
            SolverEntry(
                solver_id=str(rec["solver_id"]),
                framework=str(rec["framework"]),
                backend=str(rec["backend"]),
                doc_path=rec.get("doc_path"),
            )
            for rec in data["entries"]
        )
        return SolverCatalog(entries)


def default_catalog() -> SolverCatalog:
    from importlib import resources

    data = json.loads(
        resources.files("archskills").joinpath("data/solver_catalog.json").read_text("utf-8")
    )
    return SolverCatalog(
        tuple(
            SolverEntry(rec["solver_id"], rec["framework"], rec["backend"], rec.get("doc_path"))
            for rec in data["entries"]
        )
    )


@dataclass(frozen=True)
class RolloutLimits:
    """Episode-level limits: turn cap plus per-execution limits."""

    max_turns: int = 12
    execution: ExecutionLimits = field(default_factory=ExecutionLimits)

    def __post_init__(self) -> None:
        if self.max_turns < 1:
            raise ValueError("max_turns must be >= 1")


@dataclass(frozen=True)
class TrajectoryStep:
    """One dispatched tool call and its observation."""

    code: str
    observation: ExecutionObservation

    def __post_init__(self) -> None:
        if not self.code.strip():
            raise ValueError("step code must be non-empty")

    def to_record(self) -> dict:
        return {"code": self.code, "observation": self.observation.to_record()}

    @staticmethod
    def from_record(record: dict) -> "TrajectoryStep":
        return TrajectoryStep(
            code=record["code"],
            observation=ExecutionObservation.from_record(record["observation"]),
        )


@dataclass(frozen=True)
class Trajectory:
    """One full episode for one solver.

    ``label`` is positive/negative/unresolved; a positive label implies a
    present candidate answer.  ``error`` carries a dispatch failure message
    when the episode could not run at all.
    """

    solver_id: str
    formulation: str
    steps: tuple[TrajectoryStep, ...]
    candidate_answer: float | None
    turns_used: int
    label: str = UNRESOLVED
    error: str = ""

    def __post_init__(self) -> None:
        if self.label not in (POSITIVE, NEGATIVE, UNRESOLVED):
            raise ValueError(f"unknown label {self.label!r}")
        if self.label == POSITIVE and self.candidate_answer is None:
            raise ValueError("positive trajectory must carry a candidate answer")

    def to_record(self) -> dict:
        return {
            "solver_id": self.solver_id,
            "formulation": self.formulation,
            "steps": [step.to_record() for step in self.steps],
            "candidate_answer": self.candidate_answer,
            "turns_used": self.turns_used,
            "label": self.label,
            "error": self.error,
        }

    @staticmethod
    def from_record(record: dict) -> "Trajectory":
        return Trajectory(
            solver_id=record["solver_id"],
            formulation=record.get("formulation", ""),
            steps=tuple(TrajectoryStep.from_record(s) for s in record.get("steps", ())),
            candidate_answer=(
                None
                if record.get("candidate_answer") is None
                else float(record["candidate_answer"])
            ),
            turns_used=int(record.get("turns_used", 0)),
            label=record.get("label", UNRESOLVED),
            error=record.get("error", ""),
        )


@dataclass(frozen=True)
class TrajectorySet:
    """Labeled partition of one problem's portfolio trajectories."""

    positives: tuple[Trajectory, ...]
    negatives: tuple[Trajectory, ...]

    def __post_init__(self) -> None:
        for traj in self.positives:
            if traj.label != POSITIVE:
                raise ValueError("positives must all be labeled positive")
        for traj in self.negatives:
            if traj.label != NEGATIVE:
                raise ValueError("negatives must all be labeled negative")

    def __len__(self) -> int:
        return len(self.positives) + len(self.negatives)

    def all_in_order(self) -> tuple[Trajectory, ...]:
        return (*self.positives, *self.negatives)


def select_solvers(
    problem_text: str,
    keywords: Ingredients,
    catalog: SolverCatalog,
    k: int,
    *,
    chat,
    temperature: float = 0.0,
) -> list[SolverEntry]:
    """Ask the model for a top-k solver shortlist from the catalog.

    Unknown ids and duplicates are dropped; the list is padded back to k
    with the first unchosen catalog entries in catalog order, so exactly
    ``min(k, len(catalog))`` distinct entries always come back.  Output
    that cannot be parsed at all gets one repair retry, then
    MalformedSelection.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(catalog) == 0:
        raise ValueError("catalog is empty")
    k = min(k, len(catalog))
    prompt = render_template(
        "solver_selection",
        problem_description=problem_text,
        keywords=keywords.to_prompt_json(),
        top_k=str(k),
        solver_catalog=catalog.to_prompt_json(),
    )
    request = ChatRequest(system_text="", user_text=prompt, temperature=temperature)

    def parse(response):
        payload = extract_json_object(response.text)
        selected = payload.get("selected")
        if not isinstance(selected, list):
            raise ParseFailure("missing 'selected' list")
        ids = []
        for item in selected:
            if not isinstance(item, dict) or not isinstance(item.get("solver_id"), str):
                raise ParseFailure("selected entries must be objects with solver_id")
            ids.append(item["solver_id"])
        return ids

    raw_ids = request_with_repair(chat, request, parse, MalformedSelection)

    known = set(catalog.ids())
    chosen: list[str] = []
    for solver_id in raw_ids:
        if solver_id in known and solver_id not in chosen:
            chosen.append(solver_id)
        if len(chosen) == k:
            break
    for solver_id in catalog.ids():
        if len(chosen) == k:
            break
        if solver_id not in chosen:
            chosen.append(solver_id)
    return [catalog.get(solver_id) for solver_id in chosen]


_TAG_RES: dict[str, re.Pattern] = {}


def _last_tag(text: str, tag: str) -> str | None:
    pattern = _TAG_RES.get(tag)
    if pattern is None:
        pattern = re.compile(rf"<{tag}>(.*?)</{tag}>", re.DOTALL)
        _TAG_RES[tag] = pattern
    matches = pattern.findall(text)
    return matches[-1] if matches else None


def _parse_tag_number(content: str) -> float | None:
    try:
        value = float(content.strip())
    except ValueError:
        return None
    import math

    return value if math.isfinite(value) else None


def _observation_transcript(observation: ExecutionObservation) -> str:
    lines = [
        "### Tool result (run_code)",
        f"exit_status={observation.exit_status} "
        f"timed_out={observation.timed_out} "
        f"wall_time={observation.wall_time:.3f}s",
    ]
    if observation.stdout:
        lines.append("stdout:\n" + observation.stdout)
    if observation.stderr:
        lines.append("stderr:\n" + observation.stderr)
    return "\n".join(lines)


def _solver_context(solver: SolverEntry, solver_doc: str | None) -> str:
    lines = [
        "",
        "### Assigned Solver",
        f"Use framework `{solver.framework}` with backend `{solver.backend}` "
        f"(solver_id: {solver.solver_id}) for this task.",
    ]
    if solver_doc:
        lines.extend(["", "<solver_doc>", solver_doc, "</solver_doc>"])
    return "\n".join(lines)


def run_agent_loop(
    problem_text: str,
    keywords: Ingredients,
    executor,
    limits: RolloutLimits,
    *,
    chat,
    skill_body: str | None = None,
    solver: SolverEntry | None = None,
    solver_doc: str | None = None,
    temperature: float = 0.0,
) -> Trajectory:
    """Run one tool-calling episode and return the unlabeled trajectory.

    Each model turn may carry at most one tool call, dispatched through
    ``executor``.  The episode terminates on a numeric ``<answer>`` tag; a
    malformed answer terminates it unresolved with no candidate.  On turn
    exhaustion the last tracked ``<tmp>`` value becomes the candidate.
    Provider and executor errors propagate to the caller.
    """
    if not problem_text.strip():
        raise ValueError("problem_text must be non-empty")
    system_text = render_template(
        "executor_system",
        keywords=keywords.to_prompt_json(),
        skill=skill_body if skill_body is not None else NO_SKILL_PLACEHOLDER,
    )
    if solver is not None:
        system_text += _solver_context(solver, solver_doc)
    base_user = render_template("executor_user", problem_description=problem_text)

    transcript: list[str] = []
    steps: list[TrajectoryStep] = []
    formulation = ""
    tmp_value: float | None = None
    candidate: float | None = None
    turns_used = 0
    solver_id = solver.solver_id if solver is not None else ""

    for _ in range(limits.max_turns):
        user_text = base_user
        if transcript:
            user_text += "\n\n### Conversation so far\n" + "\n\n".join(transcript)
        request = ChatRequest(
            system_text=system_text,
            user_text=user_text,
            temperature=temperature,
            tool_schemas=(RUN_CODE_TOOL,),
        )
        response = chat.chat_complete(request)
        turns_used += 1

        text = response.text or ""
        latest_formulation = _last_tag(text, "formulation")
        if latest_formulation is not None:
            formulation = latest_formulation.strip()
        tmp_tag = _last_tag(text, "tmp")
        if tmp_tag is not None:
            parsed_tmp = _parse_tag_number(tmp_tag)
            if parsed_tmp is not None:
                tmp_value = parsed_tmp

        answer_tag = _last_tag(text, "answer")
        if answer_tag is not None:
            candidate = _parse_tag_number(answer_tag)
            # Malformed answers end the episode with nothing; the <tmp>
            # fallback is reserved for turn exhaustion.
            break

        if response.tool_call is not None:
            code = response.tool_call.decode_code()
            observation = executor.execute_script(code, limits.execution)
            steps.append(TrajectoryStep(code=code, observation=observation))
            transcript.append("### Assistant\n" + text)
            transcript.append(_observation_transcript(observation))
        else:
            transcript.append("### Assistant\n" + text)
    else:
        candidate = tmp_value

    return Trajectory(
        solver_id=solver_id,
        formulation=formulation,
        steps=tuple(steps),
        candidate_answer=candidate,
        turns_used=turns_used,
        label=UNRESOLVED,
    )


def label_trajectory(
    trajectory: Trajectory,
    ground_truth: float,
    tolerance: MatchTolerance | None = None,
) -> Trajectory:
    """Label against ground truth: no candidate or a mismatch is negative."""
    if trajectory.candidate_answer is None:
        return replace(trajectory, label=NEGATIVE)
    if answers_match(trajectory.candidate_answer, ground_truth, tolerance):
        return replace(trajectory, label=POSITIVE)
    return replace(trajectory, label=NEGATIVE)


def _read_solver_doc(entry: SolverEntry) -> str | None:
    if entry.doc_path is None:
        return None
    with open(entry.doc_path, "r", encoding="utf-8") as fh:
        return fh.read()


def rollout_portfolio(
    problem_text: str,
    ground_truth: float,
    keywords: Ingredients,
    catalog: SolverCatalog,
    k: int,
    executor,
    limits: RolloutLimits,
    *,
    chat,
    tolerance: MatchTolerance | None = None,
    skill_body: str | None = None,
    temperature: float = 0.0,
    max_parallel: int = 1,
    load_doc=_read_solver_doc,
) -> TrajectorySet:
    """Select k solvers, roll out each, label, and partition.

    A failure inside one episode (provider, sandbox, protocol) never
    aborts its siblings: the failing solver contributes a negative
    trajectory whose ``error`` field holds the message.  Results keep
    selection order regardless of ``max_parallel``.
    """
    chosen = select_solvers(problem_text, keywords, catalog, k, chat=chat, temperature=temperature)

    def run_one(entry: SolverEntry) -> Trajectory:
        try:
            trajectory = run_agent_loop(
                problem_text,
                keywords,
                executor,
                limits,
                chat=chat,
                skill_body=skill_body,
                solver=entry,
                solver_doc=load_doc(entry),
                temperature=temperature,
            )
        except (ProviderError, OSError, ValueError) as exc:
            return Trajectory(
                solver_id=entry.solver_id,
                formulation="",
                steps=(),
                candidate_answer=None,
                turns_used=0,
                label=NEGATIVE,
                error=f"{type(exc).__name__}: {exc}",
            )
        return label_trajectory(trajectory, ground_truth, tolerance)

    if max_parallel > 1 and len(chosen) > 1:
        with ThreadPoolExecutor(max_workers=max_parallel) as pool:
            labeled = list(pool.map(run_one, chosen))
    else:
        labeled = [run_one(entry) for entry in chosen]

    return TrajectorySet(
        positives=tuple(t for t in labeled if t.label == POSITIVE),
        negatives=tuple(t for t in labeled if t.label == NEGATIVE),
    )
