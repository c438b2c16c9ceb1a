"""Pipeline phases: discover, learn, eval, plus report-only subcommands.

Each phase reads a RunConfig, runs against the configured providers, and
writes its artifacts (JSONL records, a canonical JSON report, a CSV, and a
PNG figure) into a run directory.  Reports embed only relative paths and
no wall-clock values, so a pinned clock and scripted providers reproduce
byte-identical runs.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field

from . import report as report_mod
from .archetype import build_representation, extract_archetype
from .clustering import NOISE, adjusted_rand_index, dbscan, pairwise_f1
from .config import (
    ConfigError,
    DatasetError,
    RunConfig,
    load_config,
    load_dataset,
    load_keywords_list,
    load_solver_catalog,
    make_chat_provider,
    make_clock,
    make_embedding_provider,
    make_executor,
    split_dataset,
)
from .evaluation import answers_match, pass_at_1, retrieval_metrics
from .providers import CallBudget
from .rollout import rollout_portfolio, run_agent_loop
from .skills import (
    COMPONENT_ERRORS,
    EmptyLibrary,
    Ingredients,
    SkillLibrary,
    analyze_trajectories,
    distill_cluster_skill,
    learn_step,
    load_library,
    save_library,
    select_skill,
    snapshot_library,
)
from .store import read_jsonl, write_json, write_jsonl

logger = logging.getLogger(__name__)


@dataclass
class PhaseResult:
    phase: str
    run_dir: str
    summary: dict = field(default_factory=dict)
    outputs: list[str] = field(default_factory=list)


def _components(config: RunConfig):
    budget = CallBudget(config.call_budget) if config.call_budget is not None else None
    chat = make_chat_provider(config, budget)
    embedder = make_embedding_provider(config, budget)
    executor = make_executor(config)
    clock = make_clock(config)
    return chat, embedder, executor, clock


def _require_answer(problem) -> float:
    if problem.answer is None:
        raise DatasetError(f"problem {problem.problem_id} has no ground-truth answer")
    return problem.answer


def _merge_keywords(ingredient_list: list[Ingredients]) -> Ingredients:
    """Slot-wise union across cluster members, first-seen order."""
    slots: dict[str, list[str]] = {"variable": [], "constraint": [], "objective": []}
    for ingredients in ingredient_list:
        for slot, seen in slots.items():
            for token in getattr(ingredients, slot):
                if token not in seen:
                    seen.append(token)
    return Ingredients.from_lists(**slots)


def run_discover(config: RunConfig, run_dir: str) -> PhaseResult:
    """Phase one: represent, roll out, cluster, and distill seed skills."""
    if not config.dataset:
        raise ConfigError("discover needs a dataset path")
    problems = load_dataset(config.dataset)
    discover_split, _ = split_dataset(problems, config.shuffle_seed, config.train_fraction)
    if not discover_split:
        raise ConfigError("discover split is empty; check train_fraction")
    for problem in discover_split:
        _require_answer(problem)

    chat, embedder, executor, clock = _components(config)
    catalog = load_solver_catalog(config)
    limits = config.rollout_limits()
    tolerance = config.tolerance()

    archetype_records = []
    trajectory_records = []
    analysis_records = []
    kept = []  # (problem, representation, analyses)
    failed = []
    for problem in discover_split:
        try:
            extraction = extract_archetype(
                problem.problem, "train", chat=chat, temperature=config.temperature
            )
            representation = build_representation(
                extraction,
                embedder=embedder,
                alpha=config.alpha,
                normalize_components=config.embedding.normalize_components,
            )
            tset = rollout_portfolio(
                problem.problem,
                problem.answer,
                extraction.ingredients,
                catalog,
                config.top_k,
                executor,
                limits,
                chat=chat,
                tolerance=tolerance,
                temperature=config.temperature,
                max_parallel=config.max_parallel_rollouts,
            )
            analyses = analyze_trajectories(
                tset, extraction.ingredients, chat=chat, temperature=config.temperature
            )
        except COMPONENT_ERRORS as exc:
            logger.warning("discover: skipping %s: %s", problem.problem_id, exc)
            failed.append({"problem_id": problem.problem_id, "error": f"{type(exc).__name__}: {exc}"})
            continue
        kept.append((problem, representation, analyses))
        archetype_records.append(
            {
                "problem_id": problem.problem_id,
                **extraction.to_record(),
                "fused_embedding": list(representation.fused.values),
            }
        )
        trajectory_records.append(
            {
                "problem_id": problem.problem_id,
                "positives": [t.to_record() for t in tset.positives],
                "negatives": [t.to_record() for t in tset.negatives],
            }
        )
        analysis_records.append(
            {
                "problem_id": problem.problem_id,
                "analyses": [a.to_record() for a in analyses],
            }
        )

    if not kept:
        raise ConfigError("no problem survived the discover phase")

    assignment = dbscan(
        [representation.fused for _, representation, _ in kept],
        config.epsilon,
        config.min_samples,
    ).canonical()

    library = SkillLibrary()
    for cluster_id in range(assignment.cluster_count):
        members = assignment.members(cluster_id)
        member_keywords = _merge_keywords(
            [kept[i][1].extraction.ingredients for i in members]
        )
        member_analyses = [a for i in members for a in kept[i][2]]
        if not member_analyses:
            logger.warning("discover: cluster %d has no usable analyses", cluster_id)
            continue
        skill = distill_cluster_skill(
            member_analyses,
            member_keywords,
            chat=chat,
            cluster_provenance=str(cluster_id),
            clock=clock,
            temperature=config.temperature,
        )
        library.add(skill)

    library_dir = config.library_dir or os.path.join(run_dir, "library")
    save_library(library, library_dir)

    write_jsonl(os.path.join(run_dir, "archetypes.jsonl"), archetype_records)
    write_jsonl(os.path.join(run_dir, "trajectories.jsonl"), trajectory_records)
    write_jsonl(os.path.join(run_dir, "analyses.jsonl"), analysis_records)
    report_mod.write_csv(
        os.path.join(run_dir, "assignments.csv"),
        ["problem_id", "cluster"],
        [
            (problem.problem_id, assignment.labels[i])
            for i, (problem, _, _) in enumerate(kept)
        ],
    )
    report_mod.cluster_sizes_figure(assignment, os.path.join(run_dir, "cluster_sizes.png"))

    noise_count = sum(1 for label in assignment.labels if label == NOISE)
    positives = sum(len(rec["positives"]) for rec in trajectory_records)
    negatives = sum(len(rec["negatives"]) for rec in trajectory_records)
    summary = {
        "problems": len(kept),
        "failed_problems": len(failed),
        "clusters": assignment.cluster_count,
        "noise_points": noise_count,
        "skills_built": len(library),
        "library_version": library.version,
        "positive_trajectories": positives,
        "negative_trajectories": negatives,
    }
    write_json(
        os.path.join(run_dir, "discover_report.json"),
        {**summary, "failed": failed},
    )
    return PhaseResult(
        phase="discover",
        run_dir=run_dir,
        summary=summary,
        outputs=[
            "archetypes.jsonl",
            "trajectories.jsonl",
            "analyses.jsonl",
            "assignments.csv",
            "cluster_sizes.png",
            "discover_report.json",
        ],
    )


def run_learn(config: RunConfig, run_dir: str) -> PhaseResult:
    """Phase two: one online learn step per held-back training problem."""
    if not config.dataset:
        raise ConfigError("learn needs a dataset path")
    if not config.library_dir:
        raise ConfigError("learn needs library_dir pointing at a discovered library")
    problems = load_dataset(config.dataset)
    _, learn_split = split_dataset(problems, config.shuffle_seed, config.train_fraction)
    if not learn_split:
        raise ConfigError("learn split is empty; check train_fraction")
    for problem in learn_split:
        _require_answer(problem)

    chat, embedder, executor, clock = _components(config)
    catalog = load_solver_catalog(config)
    limits = config.rollout_limits()
    tolerance = config.tolerance()

    library = load_library(config.library_dir)
    version_before = library.version
    updates = []
    for problem in learn_split:
        outcome = learn_step(
            problem.problem,
            problem.answer,
            library,
            catalog,
            executor,
            limits,
            chat=chat,
            embedder=embedder,
            alpha=config.alpha,
            top_k=config.top_k,
            tolerance=tolerance,
            temperature=config.temperature,
            problem_id=problem.problem_id,
            persist_dir=config.library_dir,
            clock=clock,
            max_parallel=config.max_parallel_rollouts,
            normalize_components=config.embedding.normalize_components,
        )
        library = outcome.library
        updates.append(outcome.record)

    path_counts: dict[str, int] = {}
    for update in updates:
        path_counts[update["path"]] = path_counts.get(update["path"], 0) + 1

    write_jsonl(os.path.join(run_dir, "updates.jsonl"), updates)
    report_mod.write_csv(
        os.path.join(run_dir, "updates.csv"),
        ["problem_id", "path", "reason", "skill_id", "positives", "negatives", "error"],
        [
            (
                u["problem_id"],
                u["path"],
                u["reason"],
                u["skill_id"],
                u["positives"],
                u["negatives"],
                u["error"],
            )
            for u in updates
        ],
    )
    report_mod.learn_paths_figure(path_counts, os.path.join(run_dir, "learn_paths.png"))
    summary = {
        "problems": len(learn_split),
        "refined": path_counts.get("refined", 0),
        "expanded": path_counts.get("expanded", 0),
        "unchanged": path_counts.get("unchanged", 0),
        "version_before": version_before,
        "version_after": library.version,
        "skills": len(library),
    }
    write_json(os.path.join(run_dir, "learn_report.json"), summary)
    return PhaseResult(
        phase="learn",
        run_dir=run_dir,
        summary=summary,
        outputs=["updates.jsonl", "updates.csv", "learn_paths.png", "learn_report.json"],
    )


def run_eval(config: RunConfig, run_dir: str) -> PhaseResult:
    """Phase three: skill-guided inference over the eval dataset."""
    if not config.eval_dataset:
        raise ConfigError("eval needs an eval_dataset path")
    if not config.library_dir:
        raise ConfigError("eval needs library_dir pointing at a learned library")
    problems = load_dataset(config.eval_dataset)
    for problem in problems:
        _require_answer(problem)
    library = load_library(config.library_dir)
    if len(library) == 0:
        raise EmptyLibrary("eval needs a non-empty skill library")

    chat, embedder, executor, clock = _components(config)
    limits = config.rollout_limits()
    tolerance = config.tolerance()
    keywords_list = load_keywords_list(config)

    rows = []
    by_benchmark: dict[str, list[bool]] = {}
    for problem in problems:
        candidate = None
        skill_id = ""
        error = ""
        try:
            extraction = extract_archetype(
                problem.problem,
                "eval",
                chat=chat,
                keywords_list=keywords_list,
                temperature=config.temperature,
            )
            representation = build_representation(
                extraction,
                embedder=embedder,
                alpha=config.alpha,
                normalize_components=config.embedding.normalize_components,
            )
            decision = select_skill(
                representation,
                library,
                "eval",
                chat=chat,
                embedder=embedder,
                prefilter_threshold=config.prefilter_threshold,
                prefilter_limit=config.prefilter_limit,
                temperature=config.temperature,
            )
            skill_id = decision.skill_id
            skill = library.get(skill_id)
            trajectory = run_agent_loop(
                problem.problem,
                extraction.ingredients,
                executor,
                limits,
                chat=chat,
                skill_body=skill.body,
                temperature=config.temperature,
            )
            candidate = trajectory.candidate_answer
        except COMPONENT_ERRORS as exc:
            error = f"{type(exc).__name__}: {exc}"
            logger.warning("eval: %s failed: %s", problem.problem_id, error)
        correct = candidate is not None and answers_match(candidate, problem.answer, tolerance)
        by_benchmark.setdefault(problem.benchmark, []).append(correct)
        rows.append(
            {
                "problem_id": problem.problem_id,
                "benchmark": problem.benchmark,
                "skill_id": skill_id,
                "candidate_answer": candidate,
                "ground_truth": problem.answer,
                "correct": correct,
                "error": error,
            }
        )

    micro, macro = pass_at_1(by_benchmark)
    benchmark_summary = {
        name: {
            "total": len(flags),
            "correct": sum(flags),
            "pass_at_1": sum(flags) / len(flags),
        }
        for name, flags in sorted(by_benchmark.items())
    }
    report_mod.write_csv(
        os.path.join(run_dir, "results.csv"),
        ["problem_id", "benchmark", "skill_id", "candidate_answer", "ground_truth", "correct"],
        [
            (
                r["problem_id"],
                r["benchmark"],
                r["skill_id"],
                r["candidate_answer"],
                r["ground_truth"],
                r["correct"],
            )
            for r in rows
        ],
    )
    report_mod.pass_rate_figure(
        {name: stats["pass_at_1"] for name, stats in benchmark_summary.items()},
        micro,
        macro,
        os.path.join(run_dir, "pass_rates.png"),
    )
    payload = {
        "micro_pass_at_1": micro,
        "macro_pass_at_1": macro,
        "benchmarks": benchmark_summary,
        "problems": rows,
    }
    write_json(os.path.join(run_dir, "eval_report.json"), payload)
    summary = {
        "problems": len(rows),
        "micro_pass_at_1": micro,
        "macro_pass_at_1": macro,
        "benchmarks": len(benchmark_summary),
    }
    return PhaseResult(
        phase="eval",
        run_dir=run_dir,
        summary=summary,
        outputs=["results.csv", "pass_rates.png", "eval_report.json"],
    )


def aggregate_results(records: list[dict]) -> dict:
    """Fold precomputed result records into the Pass@1 table."""
    by_benchmark: dict[str, list[bool]] = {}
    for record in records:
        by_benchmark.setdefault(str(record.get("benchmark", "default")), []).append(
            bool(record["correct"])
        )
    micro, macro = pass_at_1(by_benchmark)
    return {
        "micro_pass_at_1": micro,
        "macro_pass_at_1": macro,
        "benchmarks": {
            name: {
                "total": len(flags),
                "correct": sum(flags),
                "pass_at_1": sum(flags) / len(flags),
            }
            for name, flags in sorted(by_benchmark.items())
        },
    }


def run_eval_aggregate(results_path: str, run_dir: str) -> PhaseResult:
    """Eval in aggregate-only mode: no inference, just the Pass@1 table."""
    payload = aggregate_results(read_jsonl(results_path))
    write_json(os.path.join(run_dir, "eval_report.json"), payload)
    report_mod.pass_rate_figure(
        {name: stats["pass_at_1"] for name, stats in payload["benchmarks"].items()},
        payload["micro_pass_at_1"],
        payload["macro_pass_at_1"],
        os.path.join(run_dir, "pass_rates.png"),
    )
    return PhaseResult(
        phase="eval",
        run_dir=run_dir,
        summary={
            "micro_pass_at_1": payload["micro_pass_at_1"],
            "macro_pass_at_1": payload["macro_pass_at_1"],
            "benchmarks": len(payload["benchmarks"]),
        },
        outputs=["eval_report.json", "pass_rates.png"],
    )


def _load_embedding_records(path):
    records = read_jsonl(path)
    if not records:
        raise DatasetError(f"no embedding records in {path}")
    ids = [str(rec.get("id", i)) for i, rec in enumerate(records)]
    vectors = [rec["embedding"] for rec in records]
    labels = [rec.get("label") for rec in records]
    return ids, vectors, labels


def run_cluster(
    config: RunConfig,
    embeddings_path: str,
    run_dir: str,
    sweep: list[float] | None = None,
) -> PhaseResult:
    """Cluster an embeddings file; with --sweep, scan epsilon values."""
    ids, vectors, labels = _load_embedding_records(embeddings_path)
    have_labels = all(label is not None for label in labels)

    if sweep:
        rows = []
        ari_values = []
        f1_values = []
        for epsilon in sweep:
            assignment = dbscan(vectors, epsilon, config.min_samples).canonical()
            noise = sum(1 for label in assignment.labels if label == NOISE)
            row = {
                "epsilon": epsilon,
                "clusters": assignment.cluster_count,
                "noise": noise,
            }
            if have_labels:
                row["ari"] = adjusted_rand_index(assignment.labels, labels)
                row["pairwise_f1"] = pairwise_f1(assignment.labels, labels)
                ari_values.append(row["ari"])
                f1_values.append(row["pairwise_f1"])
            rows.append(row)
        header = list(rows[0].keys())
        report_mod.write_csv(
            os.path.join(run_dir, "sweep.csv"),
            header,
            [[row[column] for column in header] for row in rows],
        )
        if have_labels:
            report_mod.cluster_sweep_figure(
                sweep, ari_values, f1_values, os.path.join(run_dir, "sweep.png")
            )
        else:
            report_mod.cluster_sweep_figure(
                sweep,
                [row["clusters"] / max(len(ids), 1) for row in rows],
                [0.0] * len(rows),
                os.path.join(run_dir, "sweep.png"),
            )
        write_json(os.path.join(run_dir, "sweep_report.json"), {"rows": rows})
        return PhaseResult(
            phase="cluster",
            run_dir=run_dir,
            summary={"sweep_points": len(rows), "labeled": have_labels},
            outputs=["sweep.csv", "sweep.png", "sweep_report.json"],
        )

    assignment = dbscan(vectors, config.epsilon, config.min_samples).canonical()
    noise = sum(1 for label in assignment.labels if label == NOISE)
    report_mod.write_csv(
        os.path.join(run_dir, "assignments.csv"),
        ["id", "cluster"],
        list(zip(ids, assignment.labels)),
    )
    report_mod.cluster_sizes_figure(assignment, os.path.join(run_dir, "cluster_sizes.png"))
    payload = {
        "epsilon": config.epsilon,
        "min_samples": config.min_samples,
        "clusters": assignment.cluster_count,
        "noise": noise,
    }
    if have_labels:
        payload["ari"] = adjusted_rand_index(assignment.labels, labels)
        payload["pairwise_f1"] = pairwise_f1(assignment.labels, labels)
    write_json(os.path.join(run_dir, "cluster_report.json"), payload)
    return PhaseResult(
        phase="cluster",
        run_dir=run_dir,
        summary=payload,
        outputs=["assignments.csv", "cluster_sizes.png", "cluster_report.json"],
    )


def run_metrics(
    config: RunConfig,
    embeddings_path: str,
    run_dir: str,
    ks: list[int] = (1, 3, 5),
) -> PhaseResult:
    """Retrieval metrics over a labeled embeddings file."""
    _, vectors, labels = _load_embedding_records(embeddings_path)
    if any(label is None for label in labels):
        raise DatasetError("metrics needs a label on every embedding record")
    report = retrieval_metrics(vectors, labels, ks)
    write_json(os.path.join(run_dir, "metrics.json"), report.to_record())
    rows = []
    for k in sorted(report.hit_at):
        rows.append(("hit_at", k, report.hit_at[k]))
        rows.append(("precision_at", k, report.precision_at[k]))
        rows.append(("recall_at", k, report.recall_at[k]))
        rows.append(("map_at", k, report.map_at[k]))
    rows.append(("mrr", "", report.mrr))
    report_mod.write_csv(os.path.join(run_dir, "metrics.csv"), ["metric", "k", "value"], rows)
    report_mod.retrieval_metrics_figure(report, os.path.join(run_dir, "metrics.png"))
    return PhaseResult(
        phase="metrics",
        run_dir=run_dir,
        summary={
            "queries": report.query_count,
            "skipped": report.skipped_queries,
            "mrr": report.mrr,
        },
        outputs=["metrics.json", "metrics.csv", "metrics.png"],
    )


def run_snapshot(config: RunConfig) -> PhaseResult:
    """Record a versioned snapshot of the persisted library."""
    if not config.library_dir:
        raise ConfigError("snapshot needs library_dir")
    clock = make_clock(config)
    record = snapshot_library(config.library_dir, clock=clock)
    return PhaseResult(
        phase="snapshot",
        run_dir=config.library_dir,
        summary={
            "version": record.version,
            "skill_count": record.skill_count,
            "directory": f"snapshots/v{record.version}",
        },
        outputs=[f"snapshots/v{record.version}"],
    )
