"""Archetype representation: structural ingredients and fused embeddings.

A problem's archetype is captured by three keyword slots (variable,
constraint, objective) plus a scenario-neutral edit of the problem text.
The slots serialize to a stable string whose embedding ``w`` is fused with
the edited-problem embedding ``v`` as ``e = normalize(alpha*w +
(1-alpha)*v)``; ``e`` is what clustering and retrieval operate on.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass

import numpy as np

from .prompting import (
    ParseFailure,
    extract_json_object,
    render_template,
    request_with_repair,
)
from .providers import ChatRequest, DegenerateVector, EmbeddingVector

KEYWORD_RE = re.compile(r"^[a-z0-9]+(?:_[a-z0-9]+)*$")

SLOT_NAMES = ("variable", "constraint", "objective")


class MalformedExtraction(ValueError):
    """Extractor output stayed unparseable after the repair retry."""


class SchemaViolation(ValueError):
    """Extractor output parsed as JSON but broke the declared schema."""


class DegenerateFusion(ValueError):
    """Fused vector had (near-)zero norm and cannot be normalized."""


def normalize_keyword(raw: str) -> str:
    """Map raw model keyword text onto snake_case.

    Lowercases, converts whitespace runs and hyphens to single underscores,
    and strips leading/trailing underscores.  Validation against KEYWORD_RE
    happens at Ingredients construction.
    """
    text = raw.strip().lower()
    text = re.sub(r"[\s\-]+", "_", text)
    text = re.sub(r"_+", "_", text)
    return text.strip("_")


@dataclass(frozen=True)
class Ingredients:
    """The three keyword slots of an archetype.

    Slots hold deduplicated snake_case tokens in first-seen order; any slot
    may be empty but tokens must match ``^[a-z0-9]+(_[a-z0-9]+)*$``.
    """

    variable: tuple[str, ...] = ()
    constraint: tuple[str, ...] = ()
    objective: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        for slot in SLOT_NAMES:
            tokens = getattr(self, slot)
            seen = set()
            for token in tokens:
                if not KEYWORD_RE.match(token):
                    raise ValueError(f"{slot} keyword {token!r} is not snake_case")
                if token in seen:
                    raise ValueError(f"{slot} keyword {token!r} duplicated")
                seen.add(token)

    @staticmethod
    def from_lists(
        variable: list[str] | tuple[str, ...] = (),
        constraint: list[str] | tuple[str, ...] = (),
        objective: list[str] | tuple[str, ...] = (),
    ) -> "Ingredients":
        def dedupe(tokens):
            return tuple(dict.fromkeys(tokens))

        return Ingredients(dedupe(variable), dedupe(constraint), dedupe(objective))

    def to_record(self) -> dict:
        return {slot: list(getattr(self, slot)) for slot in SLOT_NAMES}

    def to_prompt_json(self) -> str:
        return json.dumps(self.to_record(), ensure_ascii=False)

    @staticmethod
    def from_record(record: dict) -> "Ingredients":
        return Ingredients(
            tuple(record.get("variable", ())),
            tuple(record.get("constraint", ())),
            tuple(record.get("objective", ())),
        )


def serialize_ingredients(ingredients: Ingredients) -> str:
    """Render ingredients to the canonical embedding-input string.

    Slots appear in fixed order; keys within a slot are sorted so the
    serialization is independent of extraction order.  Example:
    ``"variable: x, y | constraint: capacity | objective: profit"``.
    """
    parts = []
    for slot in SLOT_NAMES:
        keys = sorted(getattr(ingredients, slot))
        parts.append(f"{slot}: {', '.join(keys)}")
    return " | ".join(parts)


@dataclass(frozen=True)
class ArchetypeExtraction:
    """Extractor output: ingredients, edited problem text, confidence."""

    ingredients: Ingredients
    edited_problem: str
    confidence: float

    def __post_init__(self) -> None:
        if not self.edited_problem.strip():
            raise ValueError("edited_problem must be non-empty")
        if not (0.0 <= self.confidence <= 1.0):
            raise ValueError("confidence must lie in [0, 1]")

    def to_record(self) -> dict:
        return {
            "keywords": self.ingredients.to_record(),
            "edited_problem": self.edited_problem,
            "confidence": self.confidence,
        }


@dataclass(frozen=True)
class ArchetypeRepresentation:
    """Extraction plus its component and fused embeddings."""

    extraction: ArchetypeExtraction
    ingredient_embedding: EmbeddingVector
    edited_embedding: EmbeddingVector
    fused: EmbeddingVector
    alpha: float


def _parse_extraction_payload(payload: dict) -> ArchetypeExtraction:
    """Validate the extractor JSON schema. Violations are not retried."""
    allowed = {"keywords", "edited_problem", "confidence"}
    if set(payload) != allowed:
        extra = set(payload) - allowed
        missing = allowed - set(payload)
        raise SchemaViolation(
            f"extraction keys wrong: missing={sorted(missing)} extra={sorted(extra)}"
        )
    keywords = payload["keywords"]
    if not isinstance(keywords, dict) or set(keywords) != set(SLOT_NAMES):
        raise SchemaViolation("keywords must hold exactly variable/constraint/objective")
    slots: dict[str, tuple[str, ...]] = {}
    for slot in SLOT_NAMES:
        values = keywords[slot]
        if not isinstance(values, list) or not all(isinstance(v, str) for v in values):
            raise SchemaViolation(f"keywords.{slot} must be a list of strings")
        normalized = []
        for raw in values:
            token = normalize_keyword(raw)
            if not token or not KEYWORD_RE.match(token):
                raise SchemaViolation(f"keyword {raw!r} is not normalizable to snake_case")
            if token not in normalized:
                normalized.append(token)
        slots[slot] = tuple(normalized)
    edited = payload["edited_problem"]
    if not isinstance(edited, str) or not edited.strip():
        raise SchemaViolation("edited_problem must be non-empty text")
    confidence = payload["confidence"]
    if isinstance(confidence, bool) or not isinstance(confidence, (int, float)):
        raise SchemaViolation("confidence must be a number")
    if not (0.0 <= float(confidence) <= 1.0):
        raise SchemaViolation(f"confidence {confidence} outside [0, 1]")
    return ArchetypeExtraction(
        ingredients=Ingredients(slots["variable"], slots["constraint"], slots["objective"]),
        edited_problem=edited,
        confidence=float(confidence),
    )


def extract_archetype(
    problem_text: str,
    mode: str,
    *,
    chat,
    keywords_list: str | None = None,
    temperature: float = 0.0,
    max_output_length: int = 4096,
) -> ArchetypeExtraction:
    """Run the structure extractor over one problem description.

    ``mode`` is ``"train"`` or ``"eval"``; eval mode additionally grounds
    extraction in a reference keyword list and requires one.  A reply that
    is not JSON at all gets one repair retry, then MalformedExtraction.
    A reply that is JSON but violates the schema raises SchemaViolation
    immediately.
    """
    if not problem_text.strip():
        raise ValueError("problem_text must be non-empty")
    if mode == "train":
        prompt = render_template("extractor_train", problem_description=problem_text)
    elif mode == "eval":
        if keywords_list is None:
            raise ValueError("eval mode requires a keywords_list")
        prompt = render_template(
            "extractor_eval",
            problem_description=problem_text,
            keywords_list=keywords_list,
        )
    else:
        raise ValueError(f"unknown extraction mode {mode!r}")

    request = ChatRequest(
        system_text="",
        user_text=prompt,
        temperature=temperature,
        max_output_length=max_output_length,
    )

    def parse(response):
        return extract_json_object(response.text)

    payload = request_with_repair(chat, request, parse, MalformedExtraction)
    return _parse_extraction_payload(payload)


def fuse_embeddings(
    ingredient_embedding: EmbeddingVector,
    edited_embedding: EmbeddingVector,
    alpha: float,
) -> EmbeddingVector:
    """Blend the two component embeddings and re-normalize.

    Computes ``normalize(alpha*w + (1-alpha)*v)``.  Inputs must share a
    dimension; alpha must lie in [0, 1].  A blend with norm below 1e-12
    (possible when the components are antipodal and alpha is 0.5) raises
    DegenerateFusion.
    """
    if not (0.0 <= alpha <= 1.0):
        raise ValueError(f"alpha {alpha} outside [0, 1]")
    w = ingredient_embedding.as_array()
    v = edited_embedding.as_array()
    if w.shape != v.shape:
        raise ValueError(f"dimension mismatch: {w.shape[0]} vs {v.shape[0]}")
    blended = alpha * w + (1.0 - alpha) * v
    norm = float(np.linalg.norm(blended))
    if norm < 1e-12:
        raise DegenerateFusion("fused embedding has near-zero norm")
    return EmbeddingVector(tuple(float(x) for x in blended / norm))


def cosine_distance(a: EmbeddingVector, b: EmbeddingVector) -> float:
    """Cosine distance ``1 - cos(a, b)``, clipped into [0, 2]."""
    x = a.as_array()
    y = b.as_array()
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.shape[0]} vs {y.shape[0]}")
    nx = float(np.linalg.norm(x))
    ny = float(np.linalg.norm(y))
    if nx < 1e-12 or ny < 1e-12:
        raise DegenerateVector("cosine distance undefined for zero vectors")
    value = 1.0 - float(np.dot(x, y)) / (nx * ny)
    return min(max(value, 0.0), 2.0)


def build_representation(
    extraction: ArchetypeExtraction,
    *,
    embedder,
    alpha: float = 0.55,
    normalize_components: bool = True,
) -> ArchetypeRepresentation:
    """Embed both archetype components and fuse them.

    Component vectors are unit-normalized on ingestion unless
    ``normalize_components`` is off (a documented deviation knob; the fused
    vector is always normalized).
    """
    w = embedder.embed_text(serialize_ingredients(extraction.ingredients))
    v = embedder.embed_text(extraction.edited_problem)
    if normalize_components:
        w = EmbeddingVector.from_array(w.as_array(), normalize=True)
        v = EmbeddingVector.from_array(v.as_array(), normalize=True)
    fused = fuse_embeddings(w, v, alpha)
    return ArchetypeRepresentation(
        extraction=extraction,
        ingredient_embedding=w,
        edited_embedding=v,
        fused=fused,
        alpha=alpha,
    )
