"""Skill documents, the skill library, and the learn/analyze/distill ops.

A skill is a markdown document with YAML frontmatter (name, description)
followed by one or more ``# Workflow`` sections, each holding a
``## Modeling stage`` and a ``## Solving stage`` with fixed subsections.
``validate_skill_markdown`` enforces that contract; everything that mints
or mutates skills goes through it.

The library is an ordered id-to-skill map with a version that strictly
increases on every mutation.  Persistence is one markdown file per skill
plus an index.json written via atomic rename; the index write is the
commit point.
"""

from __future__ import annotations

import json
import logging
import os
import re
import shutil
import time
from dataclasses import dataclass, field, replace
from hashlib import sha256

import yaml

from .archetype import (
    ArchetypeRepresentation,
    Ingredients,
    MalformedExtraction,
    SchemaViolation,
    build_representation,
    extract_archetype,
)
from .evaluation import MatchTolerance
from .prompting import (
    REPAIR_NOTE,
    ParseFailure,
    extract_json_object,
    render_template,
)
from .providers import ChatRequest, ProviderError
from .rollout import (
    MalformedSelection,
    RolloutLimits,
    SolverCatalog,
    Trajectory,
    TrajectorySet,
    label_trajectory,
    rollout_portfolio,
    run_agent_loop,
)

logger = logging.getLogger(__name__)

POSITIVE = "positive"
NEGATIVE = "negative"


class MalformedAnalysis(ValueError):
    """Trajectory analysis output stayed invalid after the repair retry."""


class MalformedDecision(ValueError):
    """Skill selection output stayed invalid after the repair retry."""


class UnknownSkillId(KeyError):
    """A referenced skill_id does not exist among the candidates."""


class DuplicateSkillId(ValueError):
    """An added skill collides with an existing skill_id."""


class InvalidSkillDocument(ValueError):
    """A built or refined skill violates the document format contract."""

    def __init__(self, message: str, issues: tuple = ()):
        super().__init__(message)
        self.issues = issues


class CorruptLibrary(ValueError):
    """Persisted library state is internally inconsistent."""


class EmptyLibrary(ValueError):
    """An operation requiring at least one skill got an empty library."""


@dataclass(frozen=True)
class SkillFormatIssue:
    """One structural problem in a skill document."""

    code: str
    message: str
    workflow: int | None = None
    stage: str | None = None


@dataclass(frozen=True)
class SkillValidation:
    ok: bool
    issues: tuple[SkillFormatIssue, ...]
    name: str = ""
    description: str = ""
    workflow_count: int = 0


@dataclass(frozen=True)
class Skill:
    """One library entry; ``body`` is the complete markdown document."""

    skill_id: str
    name: str
    description: str
    body: str
    cluster_provenance: str | None = None
    revision: int = 1

    def __post_init__(self) -> None:
        if not self.skill_id:
            raise ValueError("skill_id must be non-empty")
        if not self.name:
            raise ValueError("name must be non-empty")
        if self.revision < 1:
            raise ValueError("revision must be >= 1")


@dataclass(frozen=True)
class SnapshotRecord:
    version: int
    skill_count: int
    timestamp: float

    def to_record(self) -> dict:
        return {
            "version": self.version,
            "skill_count": self.skill_count,
            "timestamp": self.timestamp,
        }


@dataclass(frozen=True)
class TrajectoryAnalysis:
    """Per-trajectory distilled guidance.

    Positive analyses carry a non-empty ``positive_sop`` and an empty
    ``should_avoid``; negative analyses the reverse.
    """

    candidate_id: str
    label: str
    positive_sop: str
    should_avoid: str

    def __post_init__(self) -> None:
        if self.label not in (POSITIVE, NEGATIVE):
            raise ValueError(f"unknown analysis label {self.label!r}")
        if self.label == POSITIVE:
            if not self.positive_sop.strip() or self.should_avoid.strip():
                raise ValueError("positive analysis needs a sop and no avoid text")
        else:
            if not self.should_avoid.strip() or self.positive_sop.strip():
                raise ValueError("negative analysis needs avoid text and no sop")

    def to_record(self) -> dict:
        return {
            "candidate_id": self.candidate_id,
            "label": self.label,
            "positive_sop": self.positive_sop,
            "should_avoid": self.should_avoid,
        }


# --- document validation -------------------------------------------------

_HEADING_RE = re.compile(r"^(#{1,3})\s+(.*?)\s*$")

_MODELING_SECTIONS = ("Strategy Overview", "Formulation Template", "Common Pitfalls")
_SOLVING_SECTIONS = ("Strategy Overview", "Code Usage", "Common Pitfalls")

_SECTION_CODES = {
    "Strategy Overview": "missing_strategy_overview",
    "Common Pitfalls": "missing_common_pitfalls",
    "Formulation Template": "missing_formulation_template",
    "Code Usage": "missing_code_usage",
}


def _split_frontmatter(text: str):
    lines = text.split("\n")
    start = 0
    while start < len(lines) and not lines[start].strip():
        start += 1
    if start >= len(lines) or lines[start].strip() != "---":
        return None, None, "missing_frontmatter"
    for end in range(start + 1, len(lines)):
        if lines[end].strip() == "---":
            block = "\n".join(lines[start + 1 : end])
            body = "\n".join(lines[end + 1 :])
            return block, body, None
    return None, None, "unterminated_frontmatter"


def _scan_headings(body: str) -> list[tuple[int, str, int]]:
    """(level, title, line_index) for headings outside code fences."""
    headings = []
    in_fence = False
    for index, line in enumerate(body.split("\n")):
        if line.lstrip().startswith("```"):
            in_fence = not in_fence
            continue
        if in_fence:
            continue
        match = _HEADING_RE.match(line)
        if match:
            headings.append((len(match.group(1)), match.group(2), index))
    return headings


def validate_skill_markdown(text: str) -> SkillValidation:
    """Check a skill document against the format contract.

    Checks run in document order: frontmatter with name and description,
    at least one ``# Workflow`` section, then per workflow a modeling and a
    solving stage each holding its required subsections.  At most one issue
    is reported per workflow (the first missing element); frontmatter
    problems short-circuit.
    """
    front, body, front_error = _split_frontmatter(text)
    if front_error is not None:
        return SkillValidation(False, (SkillFormatIssue(front_error, "document must begin with a frontmatter block"),))
    try:
        meta = yaml.safe_load(front)
    except yaml.YAMLError as exc:
        return SkillValidation(False, (SkillFormatIssue("invalid_frontmatter", f"frontmatter is not valid YAML: {exc}"),))
    if not isinstance(meta, dict):
        return SkillValidation(False, (SkillFormatIssue("invalid_frontmatter", "frontmatter must be a YAML mapping"),))
    name = meta.get("name")
    description = meta.get("description")
    issues: list[SkillFormatIssue] = []
    if not isinstance(name, str) or not name.strip():
        issues.append(SkillFormatIssue("missing_name", "frontmatter must set a non-empty name"))
    if not isinstance(description, str) or not description.strip():
        issues.append(SkillFormatIssue("missing_description", "frontmatter must set a non-empty description"))
    if issues:
        return SkillValidation(False, tuple(issues))

    headings = _scan_headings(body)
    workflow_bounds = []
    for pos, (level, title, line) in enumerate(headings):
        if level == 1 and title.startswith("Workflow"):
            workflow_bounds.append((pos, line))
    if not workflow_bounds:
        return SkillValidation(
            False,
            (SkillFormatIssue("no_workflows", "document must contain at least one '# Workflow' section"),),
            name=name.strip(),
            description=description.strip(),
        )

    for number, (pos, _line) in enumerate(workflow_bounds, start=1):
        end_pos = workflow_bounds[number][0] if number < len(workflow_bounds) else len(headings)
        section = headings[pos + 1 : end_pos]
        issue = _check_workflow(section, number)
        if issue is not None:
            issues.append(issue)

    if issues:
        return SkillValidation(
            False,
            tuple(issues),
            name=name.strip(),
            description=description.strip(),
            workflow_count=len(workflow_bounds),
        )
    return SkillValidation(
        True,
        (),
        name=name.strip(),
        description=description.strip(),
        workflow_count=len(workflow_bounds),
    )


def _check_workflow(headings, number: int) -> SkillFormatIssue | None:
    stages: dict[str, list[str]] = {}
    current: list[str] | None = None
    for level, title, _line in headings:
        if level == 2:
            key = title.strip().lower()
            if key in ("modeling stage", "solving stage"):
                current = stages.setdefault(key, [])
            else:
                current = None
        elif level == 3 and current is not None:
            current.append(title.strip())

    for stage_key, stage_name, required in (
        ("modeling stage", "modeling", _MODELING_SECTIONS),
        ("solving stage", "solving", _SOLVING_SECTIONS),
    ):
        if stage_key not in stages:
            return SkillFormatIssue(
                f"missing_{stage_name}_stage",
                f"workflow {number} lacks its '## {stage_key.title()}' section",
                workflow=number,
            )
        present = stages[stage_key]
        for section in required:
            if section not in present:
                return SkillFormatIssue(
                    _SECTION_CODES[section],
                    f"workflow {number} {stage_name} stage lacks '### {section}'",
                    workflow=number,
                    stage=stage_name,
                )
    return None


def mint_skill_id(name: str, timestamp: float) -> str:
    """Short stable id from the skill name and first-build timestamp."""
    return sha256(f"{name}|{timestamp:.6f}".encode("utf-8")).hexdigest()[:12]


def skill_from_markdown(
    body: str,
    *,
    skill_id: str | None = None,
    cluster_provenance: str | None = None,
    revision: int = 1,
    clock=time.time,
) -> Skill:
    """Validate a document and lift it into a Skill, minting an id if needed."""
    validation = validate_skill_markdown(body)
    if not validation.ok:
        raise InvalidSkillDocument(
            "; ".join(issue.code for issue in validation.issues), validation.issues
        )
    return Skill(
        skill_id=skill_id or mint_skill_id(validation.name, clock()),
        name=validation.name,
        description=validation.description,
        body=body,
        cluster_provenance=cluster_provenance,
        revision=revision,
    )


# --- library -------------------------------------------------------------


class SkillLibrary:
    """Ordered skill store; every mutation bumps ``version`` by one."""

    def __init__(self, skills=(), version: int = 0, snapshots=()):
        self._skills: dict[str, Skill] = {}
        for skill in skills:
            if skill.skill_id in self._skills:
                raise DuplicateSkillId(f"skill_id {skill.skill_id!r} appears twice")
            self._skills[skill.skill_id] = skill
        self.version = version
        self.snapshots: list[SnapshotRecord] = list(snapshots)

    def __len__(self) -> int:
        return len(self._skills)

    def __contains__(self, skill_id: str) -> bool:
        return skill_id in self._skills

    def skills(self) -> list[Skill]:
        return list(self._skills.values())

    def get(self, skill_id: str) -> Skill:
        try:
            return self._skills[skill_id]
        except KeyError:
            raise UnknownSkillId(f"no skill with id {skill_id!r}") from None

    def add(self, skill: Skill) -> None:
        if skill.skill_id in self._skills:
            raise DuplicateSkillId(f"skill_id {skill.skill_id!r} already present")
        self._skills[skill.skill_id] = skill
        self.version += 1

    def replace(self, skill: Skill) -> None:
        if skill.skill_id not in self._skills:
            raise UnknownSkillId(f"no skill with id {skill.skill_id!r}")
        self._skills[skill.skill_id] = skill
        self.version += 1

    def copy(self) -> "SkillLibrary":
        return SkillLibrary(self.skills(), self.version, list(self.snapshots))

    def candidate_records(self) -> list[dict]:
        return [
            {"skill_id": s.skill_id, "name": s.name, "description": s.description}
            for s in self.skills()
        ]


def _index_bytes(library: SkillLibrary) -> bytes:
    payload = {
        "version": library.version,
        "skills": [
            {
                "skill_id": s.skill_id,
                "name": s.name,
                "description": s.description,
                "revision": s.revision,
                "cluster_provenance": s.cluster_provenance,
                "file": f"skills/{s.skill_id}.md",
            }
            for s in library.skills()
        ],
        "snapshots": [snap.to_record() for snap in library.snapshots],
    }
    return (json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False) + "\n").encode("utf-8")


def _atomic_write(path: str, data: bytes) -> None:
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def save_library(library: SkillLibrary, root) -> None:
    """Persist the library under ``root``.

    Skill bodies land first, each via atomic rename; the index.json rename
    is the commit point, so a crash mid-save leaves the previous index (and
    therefore the previous observable library) in place.
    """
    root = os.fspath(root)
    skills_dir = os.path.join(root, "skills")
    os.makedirs(skills_dir, exist_ok=True)
    for skill in library.skills():
        _atomic_write(
            os.path.join(skills_dir, f"{skill.skill_id}.md"),
            skill.body.encode("utf-8"),
        )
    _atomic_write(os.path.join(root, "index.json"), _index_bytes(library))


def load_library(root) -> SkillLibrary:
    """Load a persisted library, validating every referenced document."""
    root = os.fspath(root)
    index_path = os.path.join(root, "index.json")
    if not os.path.exists(index_path):
        raise CorruptLibrary(f"no index.json under {root}")
    try:
        with open(index_path, "r", encoding="utf-8") as fh:
            index = json.load(fh)
    except (json.JSONDecodeError, ValueError) as exc:
        raise CorruptLibrary(f"index.json unreadable: {exc}") from exc
    skills = []
    for entry in index.get("skills", ()):
        file_path = os.path.join(root, entry["file"])
        if not os.path.exists(file_path):
            raise CorruptLibrary(f"index references missing file {entry['file']}")
        with open(file_path, "r", encoding="utf-8") as fh:
            body = fh.read()
        validation = validate_skill_markdown(body)
        if not validation.ok:
            codes = ", ".join(issue.code for issue in validation.issues)
            raise CorruptLibrary(f"skill {entry['skill_id']} fails validation: {codes}")
        if validation.name != entry["name"]:
            raise CorruptLibrary(
                f"skill {entry['skill_id']} name mismatch: index {entry['name']!r} vs body {validation.name!r}"
            )
        skills.append(
            Skill(
                skill_id=entry["skill_id"],
                name=entry["name"],
                description=entry["description"],
                body=body,
                cluster_provenance=entry.get("cluster_provenance"),
                revision=int(entry.get("revision", 1)),
            )
        )
    snapshots = [
        SnapshotRecord(int(rec["version"]), int(rec["skill_count"]), float(rec["timestamp"]))
        for rec in index.get("snapshots", ())
    ]
    return SkillLibrary(skills, version=int(index.get("version", 0)), snapshots=snapshots)


def snapshot_library(root, clock=time.time) -> SnapshotRecord:
    """Copy the persisted library state into ``snapshots/v<version>/``.

    The skill set and version are untouched; only the snapshot history in
    the index grows.  Returns the new snapshot record.
    """
    library = load_library(root)
    root = os.fspath(root)
    target = os.path.join(root, "snapshots", f"v{library.version}")
    os.makedirs(os.path.join(target, "skills"), exist_ok=True)
    for skill in library.skills():
        shutil.copyfile(
            os.path.join(root, "skills", f"{skill.skill_id}.md"),
            os.path.join(target, "skills", f"{skill.skill_id}.md"),
        )
    shutil.copyfile(os.path.join(root, "index.json"), os.path.join(target, "index.json"))
    record = SnapshotRecord(
        version=library.version, skill_count=len(library), timestamp=clock()
    )
    library.snapshots.append(record)
    _atomic_write(os.path.join(root, "index.json"), _index_bytes(library))
    return record


# --- analysis / distillation / refinement --------------------------------


def _trajectory_indicators(trajectory: Trajectory) -> dict:
    final = trajectory.steps[-1].observation if trajectory.steps else None
    return {
        "label": trajectory.label,
        "solver_id": trajectory.solver_id,
        "turns_used": trajectory.turns_used,
        "wall_time": final.wall_time if final else None,
        "exit_status": final.exit_status if final else None,
    }


def _trajectory_payload(trajectory: Trajectory) -> dict:
    payload = {
        "solver_id": trajectory.solver_id,
        "formulation": trajectory.formulation,
        "steps": [
            {
                "code": step.code,
                "exit_status": step.observation.exit_status,
                "timed_out": step.observation.timed_out,
                "stdout": step.observation.stdout,
                "stderr": step.observation.stderr,
            }
            for step in trajectory.steps
        ],
        "candidate_answer": trajectory.candidate_answer,
        "label": trajectory.label,
    }
    if trajectory.error:
        payload["error"] = trajectory.error
    return payload


def _parse_analysis(text: str, label: str) -> tuple[str, str]:
    payload = extract_json_object(text)
    if set(payload) != {"positive_sop", "should_avoid"}:
        raise ParseFailure("analysis must hold exactly positive_sop and should_avoid")
    sop = payload["positive_sop"]
    avoid = payload["should_avoid"]
    if not isinstance(sop, str) or not isinstance(avoid, str):
        raise ParseFailure("analysis fields must be strings")
    if label == POSITIVE:
        if not sop.strip():
            raise ParseFailure("positive analysis requires a non-empty positive_sop")
        if "### Modeling" not in sop or "### Solving" not in sop:
            raise ParseFailure("positive_sop must contain '### Modeling' and '### Solving'")
        if avoid.strip():
            raise ParseFailure("positive analysis must leave should_avoid empty")
    else:
        if not avoid.strip():
            raise ParseFailure("negative analysis requires a non-empty should_avoid")
        if sop.strip():
            raise ParseFailure("negative analysis must leave positive_sop empty")
    return sop, avoid


def analyze_trajectories(
    trajectories: TrajectorySet,
    keywords: Ingredients,
    *,
    chat,
    temperature: float = 0.0,
) -> list[TrajectoryAnalysis]:
    """Produce one analysis per labeled trajectory, positives first.

    Each trajectory gets its own model call.  A reply violating the
    analysis contract is retried once with a repair note; if it still
    fails, that trajectory's analysis is dropped with a logged warning
    rather than failing the batch.
    """
    analyses: list[TrajectoryAnalysis] = []
    for index, trajectory in enumerate(trajectories.all_in_order()):
        candidate_id = f"{index}-{trajectory.solver_id or 'unassigned'}"
        prompt = render_template(
            "skill_analysis",
            keywords=keywords.to_prompt_json(),
            Indicators=json.dumps(_trajectory_indicators(trajectory), ensure_ascii=False),
            trajectory=json.dumps(_trajectory_payload(trajectory), ensure_ascii=False),
        )
        request = ChatRequest(system_text="", user_text=prompt, temperature=temperature)
        try:
            sop, avoid = _analysis_with_repair(chat, request, trajectory.label)
        except MalformedAnalysis as exc:
            logger.warning("dropping analysis for %s: %s", candidate_id, exc)
            continue
        analyses.append(
            TrajectoryAnalysis(
                candidate_id=candidate_id,
                label=trajectory.label,
                positive_sop=sop if trajectory.label == POSITIVE else "",
                should_avoid=avoid if trajectory.label == NEGATIVE else "",
            )
        )
    return analyses


def _analysis_with_repair(chat, request: ChatRequest, label: str) -> tuple[str, str]:
    response = chat.chat_complete(request)
    try:
        return _parse_analysis(response.text, label)
    except ParseFailure as first:
        retry = replace(request, user_text=request.user_text + REPAIR_NOTE.format(error=first))
        second_response = chat.chat_complete(retry)
        try:
            return _parse_analysis(second_response.text, label)
        except ParseFailure as second:
            raise MalformedAnalysis(str(second)) from second


def distill_cluster_skill(
    analyses: list[TrajectoryAnalysis],
    keywords: Ingredients,
    *,
    chat,
    cluster_provenance: str | None = None,
    clock=time.time,
    temperature: float = 0.0,
) -> Skill:
    """Build one new skill document from a cluster's candidate analyses.

    The reply must satisfy the document contract; an invalid document is
    retried once with the failing issue codes, then InvalidSkillDocument.
    """
    if not analyses:
        raise ValueError("need at least one analysis to distill")
    prompt = render_template(
        "skill_build",
        keywords=keywords.to_prompt_json(),
        candidate_analyses=json.dumps(
            [a.to_record() for a in analyses], ensure_ascii=False, indent=2
        ),
    )
    request = ChatRequest(system_text="", user_text=prompt, temperature=temperature)

    response = chat.chat_complete(request)
    validation = validate_skill_markdown(response.text)
    if not validation.ok:
        codes = ", ".join(issue.code for issue in validation.issues)
        retry = replace(
            request,
            user_text=request.user_text + REPAIR_NOTE.format(error=f"format violations: {codes}"),
        )
        response = chat.chat_complete(retry)
        validation = validate_skill_markdown(response.text)
        if not validation.ok:
            codes = ", ".join(issue.code for issue in validation.issues)
            raise InvalidSkillDocument(f"built skill invalid after retry: {codes}", validation.issues)
    return Skill(
        skill_id=mint_skill_id(validation.name, clock()),
        name=validation.name,
        description=validation.description,
        body=response.text,
        cluster_provenance=cluster_provenance,
        revision=1,
    )


def refine_skill(skill: Skill, analysis: TrajectoryAnalysis, *, chat, temperature: float = 0.0) -> Skill:
    """Revise one skill from a single trajectory analysis.

    No retry here: an invalid or renamed document aborts the refinement
    with InvalidSkillDocument and the caller keeps the original skill.
    """
    prompt = render_template(
        "skill_refine",
        skill=skill.body,
        skill_analysis=json.dumps(analysis.to_record(), ensure_ascii=False, indent=2),
        label=analysis.label,
    )
    response = chat.chat_complete(
        ChatRequest(system_text="", user_text=prompt, temperature=temperature)
    )
    validation = validate_skill_markdown(response.text)
    if not validation.ok:
        codes = ", ".join(issue.code for issue in validation.issues)
        raise InvalidSkillDocument(f"refined skill invalid: {codes}", validation.issues)
    if validation.name != skill.name:
        raise InvalidSkillDocument(
            f"refinement changed the skill name from {skill.name!r} to {validation.name!r}",
            (SkillFormatIssue("name_changed", "refinement must preserve the skill name"),),
        )
    return replace(
        skill,
        description=validation.description,
        body=response.text,
        revision=skill.revision + 1,
    )


# --- selection -----------------------------------------------------------

_SELECTION_TEMPLATES = {
    "eval": "skill_selection_eval",
    "recall": "skill_selection_recall",
    "judge": "skill_selection_judge",
}

_DECISION_VOCABULARY = {
    "recall": ("recall", "reject"),
    "judge": ("reuse", "new"),
}


@dataclass(frozen=True)
class SkillDecision:
    """Outcome of a selection consult; empty skill_id means none chosen."""

    mode: str
    decision: str
    skill_id: str
    reason: str
    confidence: float


class _UnknownIdFailure(ParseFailure):
    pass


def _parse_decision(text: str, mode: str, known_ids: set[str]) -> SkillDecision:
    payload = extract_json_object(text)
    if mode == "eval":
        expected = {"skill_id", "reason", "confidence"}
        if set(payload) != expected:
            raise ParseFailure(f"decision keys must be exactly {sorted(expected)}")
        decision = "select"
    else:
        expected = {"decision", "skill_id", "reason", "confidence"}
        if set(payload) != expected:
            raise ParseFailure(f"decision keys must be exactly {sorted(expected)}")
        decision = payload["decision"]
        vocabulary = _DECISION_VOCABULARY[mode]
        if decision not in vocabulary:
            raise ParseFailure(f"decision must be one of {vocabulary}, got {decision!r}")
    skill_id = payload["skill_id"]
    reason = payload["reason"]
    confidence = payload["confidence"]
    if not isinstance(skill_id, str) or not isinstance(reason, str):
        raise ParseFailure("skill_id and reason must be strings")
    if isinstance(confidence, bool) or not isinstance(confidence, (int, float)):
        raise ParseFailure("confidence must be a number")
    if not (0.0 <= float(confidence) <= 1.0):
        raise ParseFailure(f"confidence {confidence} outside [0, 1]")
    if decision in ("reject", "new"):
        if skill_id != "":
            raise ParseFailure(f"decision {decision!r} requires an empty skill_id")
    else:
        if not skill_id:
            raise ParseFailure(f"decision {decision!r} requires a skill_id")
        if skill_id not in known_ids:
            raise _UnknownIdFailure(f"skill_id {skill_id!r} is not a candidate")
    return SkillDecision(
        mode=mode,
        decision=decision,
        skill_id=skill_id,
        reason=reason,
        confidence=float(confidence),
    )


def _prefilter_candidates(
    candidates: list[Skill],
    representation: ArchetypeRepresentation,
    embedder,
    limit: int,
) -> list[Skill]:
    query = representation.fused.as_array()
    scored = []
    for index, skill in enumerate(candidates):
        vec = embedder.embed_text(skill.description).as_array()
        denom = float((query**2).sum() ** 0.5 * (vec**2).sum() ** 0.5)
        similarity = float(query @ vec) / denom if denom > 1e-12 else 0.0
        scored.append((-similarity, index, skill))
    scored.sort(key=lambda item: (item[0], item[1]))
    return [skill for _, _, skill in scored[:limit]]


def select_skill(
    representation: ArchetypeRepresentation,
    library: SkillLibrary,
    mode: str,
    *,
    chat,
    candidates: list[Skill] | None = None,
    embedder=None,
    prefilter_threshold: int = 40,
    prefilter_limit: int = 20,
    temperature: float = 0.0,
) -> SkillDecision:
    """Consult the selector in eval, recall, or judge mode.

    Candidates default to the whole library (eval mode requires it
    non-empty); with an embedder attached, oversized candidate lists are
    prefiltered to the descriptions nearest the fused embedding.  Replies
    violating the mode's schema get one repair retry, then
    MalformedDecision; a decision naming a non-candidate id gets the same
    retry, then UnknownSkillId.
    """
    if mode not in _SELECTION_TEMPLATES:
        raise ValueError(f"unknown selection mode {mode!r}")
    pool = candidates if candidates is not None else library.skills()
    if mode == "eval" and not pool:
        raise EmptyLibrary("eval-mode selection needs at least one candidate skill")
    if embedder is not None and len(pool) > prefilter_threshold:
        pool = _prefilter_candidates(pool, representation, embedder, prefilter_limit)
    known_ids = {skill.skill_id for skill in pool}
    candidates_json = json.dumps(
        [
            {"skill_id": s.skill_id, "name": s.name, "description": s.description}
            for s in pool
        ],
        ensure_ascii=False,
        indent=2,
    )
    prompt = render_template(
        _SELECTION_TEMPLATES[mode],
        keywords=representation.extraction.ingredients.to_prompt_json(),
        edited_problem=representation.extraction.edited_problem,
        skill_candidates_json=candidates_json,
    )
    request = ChatRequest(system_text="", user_text=prompt, temperature=temperature)

    response = chat.chat_complete(request)
    try:
        return _parse_decision(response.text, mode, known_ids)
    except ParseFailure as first:
        retry = replace(request, user_text=request.user_text + REPAIR_NOTE.format(error=first))
        second_response = chat.chat_complete(retry)
        try:
            return _parse_decision(second_response.text, mode, known_ids)
        except _UnknownIdFailure as second:
            raise UnknownSkillId(str(second)) from second
        except ParseFailure as second:
            raise MalformedDecision(str(second)) from second


# --- online learning step ------------------------------------------------

COMPONENT_ERRORS = (
    ProviderError,
    MalformedExtraction,
    SchemaViolation,
    MalformedSelection,
    MalformedAnalysis,
    MalformedDecision,
    UnknownSkillId,
    InvalidSkillDocument,
)


@dataclass(frozen=True)
class LearnOutcome:
    """Result of one online learning step: the new library plus a record."""

    library: SkillLibrary
    record: dict


def learn_step(
    problem_text: str,
    ground_truth: float,
    library: SkillLibrary,
    catalog: SolverCatalog,
    executor,
    limits: RolloutLimits,
    *,
    chat,
    embedder,
    alpha: float = 0.55,
    top_k: int = 3,
    tolerance: MatchTolerance | None = None,
    temperature: float = 0.0,
    problem_id: str = "",
    persist_dir=None,
    clock=time.time,
    max_parallel: int = 1,
    normalize_components: bool = True,
) -> LearnOutcome:
    """Run one problem through the online skill-learning loop.

    Path taken: recall consult, then a reuse judgment over the recalled
    skill; reuse leads to a skill-guided episode whose analysis refines
    the skill, while reject/new leads to a portfolio rollout that expands
    the library only when at least one positive trajectory exists.  The
    input library is never mutated; component failures (provider,
    malformed outputs, invalid documents) are captured in the returned
    record with the library unchanged.  When ``persist_dir`` is given, a
    changed library is saved there after the step completes.
    """
    record: dict = {
        "problem_id": problem_id,
        "path": "unchanged",
        "reason": "",
        "version_before": library.version,
        "version_after": library.version,
        "skill_id": "",
        "positives": 0,
        "negatives": 0,
        "error": "",
    }
    working = library
    try:
        extraction = extract_archetype(problem_text, "train", chat=chat, temperature=temperature)
        representation = build_representation(
            extraction,
            embedder=embedder,
            alpha=alpha,
            normalize_components=normalize_components,
        )
        keywords = extraction.ingredients

        recalled: Skill | None = None
        if len(library) > 0:
            recall = select_skill(
                representation, library, "recall", chat=chat, temperature=temperature
            )
            if recall.decision == "recall":
                judged = select_skill(
                    representation,
                    library,
                    "judge",
                    candidates=[library.get(recall.skill_id)],
                    chat=chat,
                    temperature=temperature,
                )
                if judged.decision == "reuse":
                    recalled = library.get(judged.skill_id)

        if recalled is not None:
            trajectory = run_agent_loop(
                problem_text,
                keywords,
                executor,
                limits,
                chat=chat,
                skill_body=recalled.body,
                temperature=temperature,
            )
            labeled = label_trajectory(trajectory, ground_truth, tolerance)
            if labeled.label == POSITIVE:
                tset = TrajectorySet(positives=(labeled,), negatives=())
                record["positives"] = 1
            else:
                tset = TrajectorySet(positives=(), negatives=(labeled,))
                record["negatives"] = 1
            analyses = analyze_trajectories(tset, keywords, chat=chat, temperature=temperature)
            if not analyses:
                record["reason"] = "analysis_dropped"
            else:
                refined = refine_skill(recalled, analyses[0], chat=chat, temperature=temperature)
                working = library.copy()
                working.replace(refined)
                record["path"] = "refined"
                record["skill_id"] = refined.skill_id
        else:
            tset = rollout_portfolio(
                problem_text,
                ground_truth,
                keywords,
                catalog,
                top_k,
                executor,
                limits,
                chat=chat,
                tolerance=tolerance,
                temperature=temperature,
                max_parallel=max_parallel,
            )
            record["positives"] = len(tset.positives)
            record["negatives"] = len(tset.negatives)
            if tset.positives:
                analyses = analyze_trajectories(tset, keywords, chat=chat, temperature=temperature)
                if not any(a.label == POSITIVE for a in analyses):
                    record["reason"] = "analysis_dropped"
                else:
                    built = distill_cluster_skill(
                        analyses,
                        keywords,
                        chat=chat,
                        clock=clock,
                        temperature=temperature,
                    )
                    working = library.copy()
                    working.add(built)
                    record["path"] = "expanded"
                    record["skill_id"] = built.skill_id
            else:
                record["reason"] = "no_positive_trajectory"
    except COMPONENT_ERRORS as exc:
        record["error"] = f"{type(exc).__name__}: {exc}"
        working = library

    record["version_after"] = working.version
    if persist_dir is not None and working.version != library.version:
        save_library(working, persist_dir)
    return LearnOutcome(library=working, record=record)
