import json

import pytest

from archskills.archetype import Ingredients
from archskills.providers import (
    ChatResponse,
    MockExhausted,
    ProviderError,
    ScriptedChatProvider,
)
from archskills.rollout import (
    MalformedSelection,
    NEGATIVE,
    POSITIVE,
    RolloutLimits,
    SolverCatalog,
    SolverEntry,
    Trajectory,
    TrajectorySet,
    TrajectoryStep,
    UNRESOLVED,
    default_catalog,
    label_trajectory,
    rollout_portfolio,
    run_agent_loop,
    select_solvers,
)
from archskills.sandbox import ExecutionLimits, ScriptedExecutor

from conftest import (
    FunctionChat,
    RecordingChat,
    obs_record,
    rec_text,
    rec_tool,
    scripted_observation,
    selection_payload,
)


KEYWORDS = Ingredients.from_lists(["x_flow"], ["capacity_limit"], ["min_cost"])
LIMITS = RolloutLimits(max_turns=12, execution=ExecutionLimits())


def catalog3() -> SolverCatalog:
    return SolverCatalog(
        (
            SolverEntry("solver_a", "framework_a", "backend_a"),
            SolverEntry("solver_b", "framework_b", "backend_b"),
            SolverEntry("solver_c", "framework_c", "backend_c"),
        )
    )


class TestSolverCatalog:
    def test_default_catalog_has_declared_order(self):
        catalog = default_catalog()
        assert len(catalog) == 8
        assert catalog.ids()[0] == "ortools_clp"
        assert "pyomo_highs" in catalog.ids()

    def test_duplicate_ids_rejected(self):
        with pytest.raises(ValueError):
            SolverCatalog(
                (
                    SolverEntry("dup", "f", "b"),
                    SolverEntry("dup", "f", "b"),
                )
            )

    def test_get_unknown_raises(self):
        with pytest.raises(KeyError):
            catalog3().get("nope")

    def test_prompt_json_lists_entries(self):
        payload = json.loads(catalog3().to_prompt_json())
        assert [e["solver_id"] for e in payload] == ["solver_a", "solver_b", "solver_c"]

    def test_from_file_round_trip(self, tmp_path):
        path = tmp_path / "catalog.json"
        path.write_text(
            json.dumps(
                {
                    "entries": [
                        {"solver_id": "s1", "framework": "f", "backend": "b"},
                        {"solver_id": "s2", "framework": "f", "backend": "b2"},
                    ]
                }
            ),
            encoding="utf-8",
        )
        catalog = SolverCatalog.from_file(path)
        assert catalog.ids() == ["s1", "s2"]


class TestSelectSolvers:
    def test_valid_ids_pass_through_in_response_order(self):
        chat = ScriptedChatProvider(
            [rec_text(selection_payload(["solver_c", "solver_a", "solver_b"]))]
        )
        chosen = select_solvers("p", KEYWORDS, catalog3(), 3, chat=chat)
        assert [e.solver_id for e in chosen] == ["solver_c", "solver_a", "solver_b"]

    def test_unknown_id_dropped_then_padded_in_declaration_order(self):
        chat = ScriptedChatProvider(
            [rec_text(selection_payload(["solver_b", "made_up_solver"]))]
        )
        chosen = select_solvers("p", KEYWORDS, catalog3(), 2, chat=chat)
        assert [e.solver_id for e in chosen] == ["solver_b", "solver_a"]

    def test_empty_selection_pads_whole_catalog(self):
        chat = ScriptedChatProvider([rec_text(selection_payload([]))])
        chosen = select_solvers("p", KEYWORDS, catalog3(), 3, chat=chat)
        assert [e.solver_id for e in chosen] == ["solver_a", "solver_b", "solver_c"]

    def test_duplicates_dropped(self):
        chat = ScriptedChatProvider(
            [rec_text(selection_payload(["solver_b", "solver_b", "solver_c"]))]
        )
        chosen = select_solvers("p", KEYWORDS, catalog3(), 3, chat=chat)
        assert [e.solver_id for e in chosen] == ["solver_b", "solver_c", "solver_a"]

    def test_k_clamped_to_catalog_size(self):
        chat = ScriptedChatProvider([rec_text(selection_payload([]))])
        chosen = select_solvers("p", KEYWORDS, catalog3(), 10, chat=chat)
        assert len(chosen) == 3

    def test_unparseable_twice_raises_after_repair(self):
        chat = FunctionChat(lambda i, r: "prose only")
        with pytest.raises(MalformedSelection):
            select_solvers("p", KEYWORDS, catalog3(), 2, chat=chat)
        assert chat.calls_made == 2

    def test_catalog_reaches_prompt(self):
        chat = RecordingChat(ScriptedChatProvider([rec_text(selection_payload([]))]))
        select_solvers("p", KEYWORDS, catalog3(), 2, chat=chat)
        assert "solver_a" in chat.requests[0].user_text


class TestTrajectory:
    def test_positive_requires_candidate(self):
        with pytest.raises(ValueError):
            Trajectory(
                solver_id="s",
                formulation="",
                steps=(),
                candidate_answer=None,
                turns_used=1,
                label=POSITIVE,
            )

    def test_step_code_non_empty(self):
        with pytest.raises(ValueError):
            TrajectoryStep(code="  ", observation=scripted_observation())

    def test_record_round_trip(self):
        trajectory = Trajectory(
            solver_id="s",
            formulation='{"objective": "min"}',
            steps=(
                TrajectoryStep(
                    code="print('RESULT: 1')",
                    observation=scripted_observation(stdout="RESULT: 1"),
                ),
            ),
            candidate_answer=1.0,
            turns_used=2,
            label=POSITIVE,
        )
        assert Trajectory.from_record(trajectory.to_record()) == trajectory


class TestRunAgentLoop:
    def test_two_turn_episode(self):
        chat = ScriptedChatProvider(
            [
                rec_tool('<formulation>{"objective": "max"}</formulation>', "print('RESULT: 7')"),
                rec_text("<tmp>7</tmp>\n<answer>7</answer>"),
            ]
        )
        executor = ScriptedExecutor.from_records([obs_record(stdout="RESULT: 7")])
        trajectory = run_agent_loop("problem", KEYWORDS, executor, LIMITS, chat=chat)
        assert trajectory.candidate_answer == 7.0
        assert trajectory.turns_used == 2
        assert len(trajectory.steps) == 1
        assert trajectory.formulation == '{"objective": "max"}'
        assert trajectory.label == UNRESOLVED

    def test_turn_exhaustion_falls_back_to_last_tmp(self):
        records = [rec_tool("<tmp>1.0</tmp>", "print(1)") for _ in range(11)]
        records.append(rec_tool("<tmp>3.5</tmp>", "print(2)"))
        chat = ScriptedChatProvider(records)
        executor = ScriptedExecutor.from_records([obs_record() for _ in range(12)])
        trajectory = run_agent_loop("problem", KEYWORDS, executor, LIMITS, chat=chat)
        assert trajectory.turns_used == 12
        assert trajectory.candidate_answer == 3.5

    def test_exhaustion_without_tmp_leaves_none(self):
        chat = FunctionChat(lambda i, r: ChatResponse(text="thinking..."))
        trajectory = run_agent_loop("problem", KEYWORDS, None, LIMITS, chat=chat)
        assert trajectory.turns_used == 12
        assert trajectory.candidate_answer is None
        assert trajectory.steps == ()

    def test_immediate_answer_degenerate_episode(self):
        chat = ScriptedChatProvider([rec_text("<answer>42</answer>")])
        trajectory = run_agent_loop("problem", KEYWORDS, None, LIMITS, chat=chat)
        assert trajectory.turns_used == 1
        assert trajectory.steps == ()
        assert trajectory.candidate_answer == 42.0

    def test_malformed_answer_terminates_unresolved(self):
        chat = ScriptedChatProvider(
            [rec_text("<tmp>9</tmp>"), rec_text("<answer>not a number</answer>")]
        )
        trajectory = run_agent_loop("problem", KEYWORDS, None, LIMITS, chat=chat)
        assert trajectory.turns_used == 2
        assert trajectory.candidate_answer is None

    def test_answer_wins_over_tool_call_in_same_turn(self):
        executor = ScriptedExecutor.from_records([obs_record()])
        chat = ScriptedChatProvider([rec_tool("<answer>5</answer>", "print(1)")])
        trajectory = run_agent_loop("problem", KEYWORDS, executor, LIMITS, chat=chat)
        assert trajectory.candidate_answer == 5.0
        assert trajectory.steps == ()
        assert executor.submitted == []

    def test_last_tag_wins_within_one_reply(self):
        chat = ScriptedChatProvider(
            [rec_text("<tmp>1</tmp> reconsidering <tmp>2</tmp>\n<answer>2</answer>")]
        )
        trajectory = run_agent_loop("problem", KEYWORDS, None, LIMITS, chat=chat)
        assert trajectory.candidate_answer == 2.0

    def test_transcript_folded_into_user_text(self):
        inner = ScriptedChatProvider(
            [
                rec_tool("working on it", "print('RESULT: 3')"),
                rec_text("<answer>3</answer>"),
            ]
        )
        chat = RecordingChat(inner)
        executor = ScriptedExecutor.from_records([obs_record(stdout="RESULT: 3")])
        run_agent_loop("problem text", KEYWORDS, executor, LIMITS, chat=chat)
        second = chat.requests[1].user_text
        assert "Conversation so far" in second
        assert "working on it" in second
        assert "RESULT: 3" in second
        assert "problem text" in second

    def test_skill_body_reaches_system_prompt(self):
        inner = ScriptedChatProvider([rec_text("<answer>1</answer>")])
        chat = RecordingChat(inner)
        run_agent_loop(
            "problem", KEYWORDS, None, LIMITS, chat=chat, skill_body="## SKILL GUIDANCE ##"
        )
        assert "## SKILL GUIDANCE ##" in chat.requests[0].system_text

    def test_solver_context_injected(self):
        inner = ScriptedChatProvider([rec_text("<answer>1</answer>")])
        chat = RecordingChat(inner)
        solver = SolverEntry("solver_b", "framework_b", "backend_b")
        run_agent_loop(
            "problem", KEYWORDS, None, LIMITS, chat=chat, solver=solver, solver_doc="DOC BODY"
        )
        system = chat.requests[0].system_text
        assert "solver_b" in system
        assert "DOC BODY" in system

    def test_provider_errors_propagate(self):
        chat = ScriptedChatProvider([])
        with pytest.raises(MockExhausted):
            run_agent_loop("problem", KEYWORDS, None, LIMITS, chat=chat)

    def test_never_exceeds_max_turns(self):
        chat = FunctionChat(lambda i, r: ChatResponse(text="no answer"))
        limits = RolloutLimits(max_turns=3, execution=ExecutionLimits())
        trajectory = run_agent_loop("problem", KEYWORDS, None, limits, chat=chat)
        assert trajectory.turns_used == 3
        assert chat.calls_made == 3


class TestLabelTrajectory:
    def _trajectory(self, candidate):
        return Trajectory(
            solver_id="s",
            formulation="",
            steps=(),
            candidate_answer=candidate,
            turns_used=1,
        )

    def test_exact_match_positive(self):
        assert label_trajectory(self._trajectory(100.0), 100.0).label == POSITIVE

    def test_absent_candidate_negative(self):
        assert label_trajectory(self._trajectory(None), 100.0).label == NEGATIVE

    def test_tolerance_arithmetic(self):
        assert label_trajectory(self._trajectory(100.005), 100.0).label == POSITIVE
        assert label_trajectory(self._trajectory(100.02), 100.0).label == NEGATIVE


class TestRolloutPortfolio:
    def _scripted_run(self, answers, executor_records, ground_truth=7.0, crash_index=None):
        records = [rec_text(selection_payload(["solver_a", "solver_b", "solver_c"]))]
        for index, answer in enumerate(answers):
            if crash_index == index:
                # Empty code makes the executor raise, exercising the
                # per-trajectory error capture.
                records.append(rec_tool("crashing", ""))
            else:
                records.append(rec_tool("step", f"print('RESULT: {answer}')"))
                records.append(rec_text(f"<tmp>{answer}</tmp>\n<answer>{answer}</answer>"))
        chat = ScriptedChatProvider(records)
        executor = ScriptedExecutor.from_records(executor_records)
        return rollout_portfolio(
            "problem", ground_truth, KEYWORDS, catalog3(), 3, executor, LIMITS, chat=chat
        )

    def test_mixed_outcomes_partitioned(self):
        tset = self._scripted_run(
            [7.0, 3.0],
            [obs_record(stdout="RESULT: 7"), obs_record(stdout="RESULT: 3")],
            crash_index=2,
        )
        assert len(tset.positives) == 1
        assert len(tset.negatives) == 2
        errors = [t.error for t in tset.negatives]
        assert any(err for err in errors)
        assert tset.positives[0].solver_id == "solver_a"

    def test_all_correct(self):
        tset = self._scripted_run(
            [7.0, 7.0, 7.0],
            [obs_record(stdout="RESULT: 7") for _ in range(3)],
        )
        assert len(tset.positives) == 3
        assert len(tset.negatives) == 0

    def test_all_crash(self):
        records = [rec_text(selection_payload(["solver_a", "solver_b", "solver_c"]))]
        records += [rec_tool("crashing", "") for _ in range(3)]
        chat = ScriptedChatProvider(records)
        executor = ScriptedExecutor.from_records([])
        tset = rollout_portfolio(
            "problem", 7.0, KEYWORDS, catalog3(), 3, executor, LIMITS, chat=chat
        )
        assert len(tset.positives) == 0
        assert len(tset.negatives) == 3
        assert all(t.error for t in tset.negatives)

    def test_selection_order_preserved_in_parallel(self):
        def respond(index, request):
            if index == 0:
                return ChatResponse(text=selection_payload(["solver_c", "solver_a", "solver_b"]))
            return ChatResponse(text="<answer>7</answer>")

        chat = FunctionChat(respond)
        tset = rollout_portfolio(
            "problem",
            7.0,
            KEYWORDS,
            catalog3(),
            3,
            None,
            LIMITS,
            chat=chat,
            max_parallel=3,
        )
        ordered = [t.solver_id for t in tset.all_in_order()]
        assert ordered == ["solver_c", "solver_a", "solver_b"]
        assert len(tset.positives) == 3

    def test_deterministic_across_runs(self):
        def run_once():
            tset = self._scripted_run(
                [7.0, 3.0, 7.0],
                [
                    obs_record(stdout="RESULT: 7"),
                    obs_record(stdout="RESULT: 3"),
                    obs_record(stdout="RESULT: 7"),
                ],
            )
            return [t.to_record() for t in tset.all_in_order()]

        assert run_once() == run_once()

    def test_all_in_order_partitions(self):
        tset = self._scripted_run(
            [7.0, 3.0],
            [obs_record(stdout="RESULT: 7"), obs_record(stdout="RESULT: 3")],
            crash_index=2,
        )
        in_order = tset.all_in_order()
        assert len(in_order) == 3
        assert {t.label for t in in_order} == {POSITIVE, NEGATIVE}


class TestTrajectorySet:
    def test_label_consistency_enforced(self):
        good = Trajectory(
            solver_id="s",
            formulation="",
            steps=(),
            candidate_answer=1.0,
            turns_used=1,
            label=POSITIVE,
        )
        with pytest.raises(ValueError):
            TrajectorySet(positives=(), negatives=(good,))
