"""Prompt template loading, slot rendering, and structured-output parsing.

Templates live as plain text package data.  Rendering substitutes only the
declared ``{slot}`` tokens, so literal JSON braces inside a template survive
untouched.  ``extract_json_object`` tolerates the usual model decorations
(code fences, prose before or after the object) but insists on a single
well-formed object.
"""

from __future__ import annotations

import json
import re
from importlib import resources

_TEMPLATE_CACHE: dict[str, str] = {}

TEMPLATE_NAMES = (
    "extractor_train",
    "extractor_eval",
    "executor_system",
    "executor_user",
    "solver_selection",
    "skill_selection_eval",
    "skill_selection_recall",
    "skill_selection_judge",
    "skill_analysis",
    "skill_build",
    "skill_refine",
)


class ParseFailure(ValueError):
    """Model output could not be parsed into the expected structure."""


def load_template(name: str) -> str:
    """Return the raw template text for ``name`` (cached)."""
    if name not in TEMPLATE_NAMES:
        raise KeyError(f"unknown prompt template {name!r}")
    cached = _TEMPLATE_CACHE.get(name)
    if cached is None:
        cached = (
            resources.files("archskills").joinpath(f"prompts/{name}.txt").read_text("utf-8")
        )
        _TEMPLATE_CACHE[name] = cached
    return cached


def render_template(name: str, **slots: str) -> str:
    """Fill the named template's ``{slot}`` tokens.

    Every provided slot must occur in the template at least once; this
    catches typos in slot names at the call site.  Tokens are replaced
    literally, so brace characters inside slot values are never re-expanded.
    """
    text = load_template(name)
    for key, value in slots.items():
        token = "{" + key + "}"
        if token not in text:
            raise KeyError(f"template {name!r} has no slot {token}")
        text = text.replace(token, str(value))
    return text


_FENCE_RE = re.compile(r"```(?:json)?\s*\n(.*?)\n```", re.DOTALL)


def extract_json_object(text: str) -> dict:
    """Pull the first complete JSON object out of model output.

    Tries, in order: the whole string, the contents of the first code
    fence, and the first balanced ``{...}`` span.  Raises ParseFailure when
    none of them parses to a dict.
    """
    candidates = [text.strip()]
    fence = _FENCE_RE.search(text)
    if fence:
        candidates.append(fence.group(1).strip())
    span = _first_balanced_object(text)
    if span is not None:
        candidates.append(span)
    for candidate in candidates:
        if not candidate:
            continue
        try:
            value = json.loads(candidate)
        except (json.JSONDecodeError, ValueError):
            continue
        if isinstance(value, dict):
            return value
    raise ParseFailure("no JSON object found in model output")


def _first_balanced_object(text: str) -> str | None:
    start = text.find("{")
    while start != -1:
        depth = 0
        in_string = False
        escaped = False
        for i in range(start, len(text)):
            ch = text[i]
            if in_string:
                if escaped:
                    escaped = False
                elif ch == "\\":
                    escaped = True
                elif ch == '"':
                    in_string = False
                continue
            if ch == '"':
                in_string = True
            elif ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
                if depth == 0:
                    return text[start : i + 1]
        start = text.find("{", start + 1)
    return None


REPAIR_NOTE = (
    "\n\nYour previous reply could not be parsed: {error}\n"
    "Reply again following the output constraints exactly. "
    "Return only the requested structure with no extra text."
)


def request_with_repair(chat, request, parse, build_error):
    """Issue ``request``, parse the reply, and retry once on parse failure.

    ``parse`` maps a ChatResponse to a value or raises ParseFailure.  On the
    second failure ``build_error(message)`` is raised.  Anything other than
    ParseFailure propagates untouched on the first attempt.
    """
    from dataclasses import replace

    response = chat.chat_complete(request)
    try:
        return parse(response)
    except ParseFailure as first:
        retry = replace(request, user_text=request.user_text + REPAIR_NOTE.format(error=first))
        second_response = chat.chat_complete(retry)
        try:
            return parse(second_response)
        except ParseFailure as second:
            raise build_error(str(second)) from second
