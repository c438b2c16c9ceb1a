"""Shared builders for scripted fixtures.

Most tests drive the pipeline through scripted providers, so nearly every
file needs the same raw materials: a format-conformant skill document,
chat scenario records, extraction payloads, and observation records.
"""

from __future__ import annotations

import json
import threading

import pytest

from archskills.providers import ChatResponse, ToolCall
from archskills.sandbox import ExecutionObservation


def make_skill_doc(
    name: str = "resource-allocation-lp",
    description: str = "Model allocation problems as linear programs and solve with status checks.",
    workflows: int = 2,
) -> str:
    """Build a document that satisfies the skill format contract."""
    parts = [
        "---",
        f"name: {name}",
        "description: |",
        f"  {description}",
        "---",
        "",
    ]
    flavors = ["continuous relaxation", "integer formulation", "network formulation"]
    for number in range(1, workflows + 1):
        flavor = flavors[(number - 1) % len(flavors)]
        parts += [
            f"# Workflow {number} ({flavor})",
            "",
            "## Modeling stage",
            "",
            "### Strategy Overview",
            f"Translate the narrative into a {flavor} with explicit bounds.",
            "",
            "### Step 1 - Identify decision variables",
            "- One variable per allocatable quantity.",
            "- Record units next to each variable.",
            "",
            "### Step 2 - Write constraints",
            "- One inequality per stated resource limit.",
            "- Keep the objective sense explicit.",
            "",
            "### Formulation Template",
            "```json",
            "{",
            '  "sets": [],',
            '  "parameters": [],',
            '  "decision_variables": [],',
            '  "objective": {',
            '    "sense": "min",',
            '    "expression": ""',
            "  },",
            '  "constraints": []',
            "}",
            "```",
            "",
            "### Common Pitfalls",
            "- Dropping non-negativity bounds.",
            "- Mixing units between parameters.",
            "",
            "## Solving stage",
            "",
            "### Strategy Overview",
            "Build the model programmatically and check solver status before reading values.",
            "",
            "### Step 1 - Build and solve",
            "- Instantiate the model from the formulation template.",
            "- Invoke the solver with default settings first.",
            "",
            "### Step 2 - Report",
            "- Verify an optimal status.",
            "- Print the objective as `RESULT:<number>`.",
            "",
            "### Code Usage",
            "```python",
            "# build model from formulation",
            "# solve with status / termination checks",
            "```",
            "",
            "### Common Pitfalls",
            "- Reading variable values before checking status.",
            "- Forgetting the RESULT line.",
            "",
        ]
    return "\n".join(parts)


def extraction_payload(
    variables=("production_quantity",),
    constraints=("capacity_limit",),
    objectives=("maximize_profit",),
    edited: str = "Maximize profit subject to capacity limits.",
    confidence: float = 0.9,
) -> str:
    return json.dumps(
        {
            "keywords": {
                "variable": list(variables),
                "constraint": list(constraints),
                "objective": list(objectives),
            },
            "edited_problem": edited,
            "confidence": confidence,
        }
    )


def analysis_payload(label: str, note: str = "use explicit bounds") -> str:
    if label == "positive":
        body = {
            "positive_sop": f"### Modeling\n- {note}\n### Solving\n- check status",
            "should_avoid": "",
        }
    else:
        body = {
            "positive_sop": "",
            "should_avoid": f"### Should Avoid\n- {note}",
        }
    return json.dumps(body)


def decision_payload(
    decision: str, skill_id: str = "", reason: str = "fits", confidence: float = 0.8
) -> str:
    return json.dumps(
        {
            "decision": decision,
            "skill_id": skill_id,
            "reason": reason,
            "confidence": confidence,
        }
    )


def eval_decision_payload(skill_id: str, reason: str = "fits", confidence: float = 0.8) -> str:
    return json.dumps({"skill_id": skill_id, "reason": reason, "confidence": confidence})


def selection_payload(ids) -> str:
    return json.dumps(
        {"selected": [{"solver_id": sid, "reason": "fits"} for sid in ids]}
    )


def rec_text(text: str) -> dict:
    return {"text": text}


def rec_tool(text: str, code: str) -> dict:
    return {"text": text, "tool_call": {"name": "run_code", "code": code}}


def obs_record(
    stdout: str = "",
    stderr: str = "",
    exit_status: int = 0,
    wall_time: float = 0.01,
    timed_out: bool = False,
) -> dict:
    return {
        "stdout": stdout,
        "stderr": stderr,
        "exit_status": exit_status,
        "wall_time": wall_time,
        "timed_out": timed_out,
    }


class FunctionChat:
    """Chat double driven by a function of (call_index, request)."""

    def __init__(self, fn):
        self._fn = fn
        self._lock = threading.Lock()
        self.requests = []

    @property
    def calls_made(self) -> int:
        with self._lock:
            return len(self.requests)

    def chat_complete(self, request):
        with self._lock:
            index = len(self.requests)
            self.requests.append(request)
        result = self._fn(index, request)
        if isinstance(result, ChatResponse):
            return result
        if isinstance(result, tuple):
            text, code = result
            return ChatResponse(
                text=text,
                tool_call=ToolCall(name="run_code", argument_text=json.dumps({"code": code})),
                finish_reason="tool_call",
            )
        return ChatResponse(text=result)


class RecordingChat:
    """Wraps a provider and keeps every request for later assertions."""

    def __init__(self, inner):
        self._inner = inner
        self.requests = []

    def chat_complete(self, request):
        self.requests.append(request)
        return self._inner.chat_complete(request)


def counter_clock(epoch: float = 1_700_000_000.0):
    state = {"ticks": 0}

    def clock() -> float:
        state["ticks"] += 1
        return epoch + state["ticks"]

    return clock


def scripted_observation(**kwargs) -> ExecutionObservation:
    return ExecutionObservation.from_record(obs_record(**kwargs))


@pytest.fixture
def skill_doc() -> str:
    return make_skill_doc()
