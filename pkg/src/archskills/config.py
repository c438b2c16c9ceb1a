"""Run configuration, dataset loading, and deterministic plumbing.

The YAML config maps one-to-one onto RunConfig; unknown keys are rejected
so typos fail fast.  ``lcg_shuffle`` pins the dataset ordering recipe
bit-exactly (documented in its docstring and the README) so split
membership never drifts across platforms or library versions.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, field, fields

import yaml

from .evaluation import MatchTolerance
from .providers import (
    CallBudget,
    HttpChatProvider,
    HttpEmbeddingProvider,
    MockEmbeddingProvider,
    ScriptedChatProvider,
)
from .rollout import RolloutLimits, SolverCatalog, default_catalog
from .sandbox import ExecutionLimits, ScriptedExecutor, SubprocessExecutor


class ConfigError(ValueError):
    """Configuration file is missing, malformed, or inconsistent."""


class DatasetError(ValueError):
    """Problem dataset violates its schema."""


@dataclass(frozen=True)
class ProblemInstance:
    """One natural-language optimization problem with optional ground truth."""

    problem_id: str
    problem: str
    answer: float | None = None
    benchmark: str = "default"

    def __post_init__(self) -> None:
        if not self.problem_id:
            raise ValueError("problem_id must be non-empty")
        if not self.problem.strip():
            raise ValueError("problem text must be non-empty")

    @staticmethod
    def from_record(record: dict) -> "ProblemInstance":
        if not isinstance(record, dict):
            raise DatasetError("dataset record must be an object")
        try:
            problem_id = str(record["problem_id"])
            problem = str(record["problem"])
        except KeyError as exc:
            raise DatasetError(f"dataset record missing {exc}") from exc
        answer = record.get("answer")
        if answer is not None:
            try:
                answer = float(answer)
            except (TypeError, ValueError) as exc:
                raise DatasetError(f"answer for {problem_id} is not numeric") from exc
        return ProblemInstance(
            problem_id=problem_id,
            problem=problem,
            answer=answer,
            benchmark=str(record.get("benchmark", "default")),
        )

    def to_record(self) -> dict:
        return {
            "problem_id": self.problem_id,
            "problem": self.problem,
            "answer": self.answer,
            "benchmark": self.benchmark,
        }


def load_dataset(path) -> list[ProblemInstance]:
    """Read a JSONL problem dataset, enforcing unique ids."""
    from .store import read_jsonl

    if not os.path.exists(path):
        raise DatasetError(f"dataset file {path} does not exist")
    problems = [ProblemInstance.from_record(rec) for rec in read_jsonl(path)]
    if not problems:
        raise DatasetError(f"dataset {path} is empty")
    seen: set[str] = set()
    for problem in problems:
        if problem.problem_id in seen:
            raise DatasetError(f"duplicate problem_id {problem.problem_id!r}")
        seen.add(problem.problem_id)
    return problems


def lcg_shuffle(items: list, seed: int) -> list:
    """Deterministic Fisher-Yates shuffle driven by a fixed 32-bit LCG.

    The generator is pinned bit-exactly so shuffles reproduce everywhere:
    ``state := (1664525 * state + 1013904223) mod 2**32`` starting from
    ``seed mod 2**32``, and for i from n-1 down to 1 the element at
    ``next_state mod (i + 1)`` swaps into position i.  Returns a new list.
    """
    out = list(items)
    state = seed & 0xFFFFFFFF
    for i in range(len(out) - 1, 0, -1):
        state = (1664525 * state + 1013904223) & 0xFFFFFFFF
        j = state % (i + 1)
        out[i], out[j] = out[j], out[i]
    return out


def split_dataset(
    problems: list[ProblemInstance], seed: int, train_fraction: float
) -> tuple[list[ProblemInstance], list[ProblemInstance]]:
    """Shuffle deterministically, then cut into (discover, learn) splits."""
    if not (0.0 < train_fraction < 1.0) and train_fraction not in (0.0, 1.0):
        raise ConfigError(f"train_fraction {train_fraction} outside [0, 1]")
    shuffled = lcg_shuffle(problems, seed)
    cut = int(len(shuffled) * train_fraction)
    return shuffled[:cut], shuffled[cut:]


@dataclass(frozen=True)
class ChatConfig:
    kind: str = "mock"
    scenario: str | None = None
    base_url: str | None = None
    model: str | None = None
    api_key_env: str = "ARCHSKILLS_API_KEY"
    timeout_s: float = 120.0


@dataclass(frozen=True)
class EmbeddingConfig:
    kind: str = "mock"
    dimension: int = 16
    vector_map_file: str | None = None
    base_url: str | None = None
    model: str | None = None
    api_key_env: str = "ARCHSKILLS_API_KEY"
    timeout_s: float = 60.0
    normalize_components: bool = True


@dataclass(frozen=True)
class ExecutorConfig:
    kind: str = "subprocess"
    scenario: str | None = None
    wall_time_limit: float = 60.0
    max_stdout_bytes: int = 1_048_576
    working_directory: str | None = None
    interpreter_command: tuple[str, ...] = ()
    extra_env_keys: tuple[str, ...] = ()


@dataclass(frozen=True)
class RunConfig:
    """Everything a pipeline phase needs, resolved from one YAML file."""

    dataset: str | None = None
    eval_dataset: str | None = None
    library_dir: str | None = None
    runs_dir: str = "runs"
    run_name: str | None = None
    solver_catalog: str | None = None
    keywords_list: str | None = None

    alpha: float = 0.55
    epsilon: float = 0.05
    min_samples: int = 1
    top_k: int = 3
    max_turns: int = 12
    temperature: float = 0.0
    shuffle_seed: int = 42
    train_fraction: float = 0.5
    max_parallel_rollouts: int = 1
    call_budget: int | None = None
    clock_epoch: float | None = None
    absolute_tolerance: float = 1e-6
    relative_tolerance: float = 1e-4
    prefilter_threshold: int = 40
    prefilter_limit: int = 20

    chat: ChatConfig = field(default_factory=ChatConfig)
    embedding: EmbeddingConfig = field(default_factory=EmbeddingConfig)
    executor: ExecutorConfig = field(default_factory=ExecutorConfig)

    def __post_init__(self) -> None:
        if not (0.0 <= self.alpha <= 1.0):
            raise ConfigError(f"alpha {self.alpha} outside [0, 1]")
        if self.epsilon <= 0:
            raise ConfigError("epsilon must be positive")
        if self.min_samples < 1:
            raise ConfigError("min_samples must be >= 1")
        if self.top_k < 1:
            raise ConfigError("top_k must be >= 1")
        if self.max_turns < 1:
            raise ConfigError("max_turns must be >= 1")
        if not (0.0 <= self.train_fraction <= 1.0):
            raise ConfigError(f"train_fraction {self.train_fraction} outside [0, 1]")
        if self.max_parallel_rollouts < 1:
            raise ConfigError("max_parallel_rollouts must be >= 1")

    def tolerance(self) -> MatchTolerance:
        return MatchTolerance(self.absolute_tolerance, self.relative_tolerance)

    def rollout_limits(self) -> RolloutLimits:
        return RolloutLimits(
            max_turns=self.max_turns,
            execution=ExecutionLimits(
                wall_time_limit=self.executor.wall_time_limit,
                max_stdout_bytes=self.executor.max_stdout_bytes,
                working_directory=self.executor.working_directory,
                interpreter_command=tuple(self.executor.interpreter_command),
            ),
        )


def _build_section(cls, data: dict, where: str):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    kwargs = dict(data)
    for key in ("interpreter_command", "extra_env_keys"):
        if key in kwargs and kwargs[key] is not None:
            kwargs[key] = tuple(kwargs[key])
    return cls(**kwargs)


def load_config(path) -> RunConfig:
    """Parse a YAML config file into a validated RunConfig."""
    if not os.path.exists(path):
        raise ConfigError(f"config file {path} does not exist")
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = yaml.safe_load(fh) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"config is not valid YAML: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    sections = {
        "chat": (ChatConfig, data.pop("chat", {}) or {}),
        "embedding": (EmbeddingConfig, data.pop("embedding", {}) or {}),
        "executor": (ExecutorConfig, data.pop("executor", {}) or {}),
    }
    top_known = {f.name for f in fields(RunConfig)} - set(sections)
    unknown = set(data) - top_known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    kwargs = dict(data)
    for name, (cls, body) in sections.items():
        if not isinstance(body, dict):
            raise ConfigError(f"config section {name!r} must be a mapping")
        kwargs[name] = _build_section(cls, body, name)
    try:
        return RunConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def make_clock(config: RunConfig):
    """Wall clock, or a deterministic epoch+counter clock when pinned."""
    if config.clock_epoch is None:
        return time.time
    state = {"ticks": 0}
    epoch = float(config.clock_epoch)

    def clock() -> float:
        state["ticks"] += 1
        return epoch + state["ticks"]

    return clock


def make_chat_provider(config: RunConfig, budget: CallBudget | None = None):
    chat = config.chat
    if chat.kind == "mock":
        if not chat.scenario:
            raise ConfigError("mock chat provider needs a scenario file")
        return ScriptedChatProvider(chat.scenario, budget=budget)
    if chat.kind == "live":
        if not chat.base_url or not chat.model:
            raise ConfigError("live chat provider needs base_url and model")
        return HttpChatProvider(
            base_url=chat.base_url,
            model=chat.model,
            api_key_env=chat.api_key_env,
            timeout_s=chat.timeout_s,
            budget=budget,
        )
    raise ConfigError(f"unknown chat provider kind {chat.kind!r}")


def make_embedding_provider(config: RunConfig, budget: CallBudget | None = None):
    emb = config.embedding
    if emb.kind == "mock":
        if emb.vector_map_file:
            return MockEmbeddingProvider.from_file(emb.vector_map_file)
        return MockEmbeddingProvider(dimension=emb.dimension, budget=budget)
    if emb.kind == "live":
        if not emb.base_url or not emb.model:
            raise ConfigError("live embedding provider needs base_url and model")
        return HttpEmbeddingProvider(
            base_url=emb.base_url,
            model=emb.model,
            api_key_env=emb.api_key_env,
            timeout_s=emb.timeout_s,
            budget=budget,
        )
    raise ConfigError(f"unknown embedding provider kind {emb.kind!r}")


def make_executor(config: RunConfig):
    ex = config.executor
    if ex.kind == "scripted":
        if not ex.scenario:
            raise ConfigError("scripted executor needs a scenario file")
        from .store import read_jsonl

        return ScriptedExecutor.from_records(read_jsonl(ex.scenario), name=ex.scenario)
    if ex.kind == "subprocess":
        return SubprocessExecutor(extra_env_keys=tuple(ex.extra_env_keys))
    raise ConfigError(f"unknown executor kind {ex.kind!r}")


def load_solver_catalog(config: RunConfig) -> SolverCatalog:
    if config.solver_catalog:
        return SolverCatalog.from_file(config.solver_catalog)
    return default_catalog()


def load_keywords_list(config: RunConfig) -> str:
    if config.keywords_list:
        with open(config.keywords_list, "r", encoding="utf-8") as fh:
            return fh.read()
    from importlib import resources

    return resources.files("archskills").joinpath("data/keywords_default.txt").read_text("utf-8")
