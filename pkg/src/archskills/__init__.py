"""Archetype-clustered skill learning for natural-language optimization problems.

The pipeline has three phases: discover (archetype representation,
density clustering, portfolio rollouts, skill distillation), learn
(online recall/judge/refine-or-expand updates to the skill library), and
eval (skill-guided inference scored by Pass@1).  Everything runs against
pluggable chat/embedding providers and a sandboxed code executor, with
scripted offline doubles for reproducible runs.
"""

from .archetype import (
    ArchetypeExtraction,
    ArchetypeRepresentation,
    Ingredients,
    build_representation,
    cosine_distance,
    extract_archetype,
    fuse_embeddings,
    serialize_ingredients,
)
from .clustering import (
    ClusterAssignment,
    adjusted_rand_index,
    dbscan,
    pairwise_f1,
)
from .evaluation import (
    MatchTolerance,
    RetrievalReport,
    answers_match,
    pass_at_1,
    retrieval_metrics,
)
from .providers import (
    CallBudget,
    ChatRequest,
    ChatResponse,
    EmbeddingVector,
    HttpChatProvider,
    HttpEmbeddingProvider,
    MockEmbeddingProvider,
    ScriptedChatProvider,
)
from .rollout import (
    RolloutLimits,
    SolverCatalog,
    SolverEntry,
    Trajectory,
    TrajectorySet,
    default_catalog,
    label_trajectory,
    parse_result_line,
    rollout_portfolio,
    run_agent_loop,
    select_solvers,
)
from .sandbox import (
    ExecutionLimits,
    ExecutionObservation,
    ScriptedExecutor,
    SubprocessExecutor,
)
from .skills import (
    Skill,
    SkillLibrary,
    TrajectoryAnalysis,
    analyze_trajectories,
    distill_cluster_skill,
    learn_step,
    load_library,
    refine_skill,
    save_library,
    select_skill,
    snapshot_library,
    validate_skill_markdown,
)

__version__ = "0.1.0"

__all__ = [
    "ArchetypeExtraction",
    "ArchetypeRepresentation",
    "Ingredients",
    "build_representation",
    "cosine_distance",
    "extract_archetype",
    "fuse_embeddings",
    "serialize_ingredients",
    "ClusterAssignment",
    "adjusted_rand_index",
    "dbscan",
    "pairwise_f1",
    "MatchTolerance",
    "RetrievalReport",
    "answers_match",
    "pass_at_1",
    "retrieval_metrics",
    "CallBudget",
    "ChatRequest",
    "ChatResponse",
    "EmbeddingVector",
    "HttpChatProvider",
    "HttpEmbeddingProvider",
    "MockEmbeddingProvider",
    "ScriptedChatProvider",
    "RolloutLimits",
    "SolverCatalog",
    "SolverEntry",
    "Trajectory",
    "TrajectorySet",
    "default_catalog",
    "label_trajectory",
    "parse_result_line",
    "rollout_portfolio",
    "run_agent_loop",
    "select_solvers",
    "ExecutionLimits",
    "ExecutionObservation",
    "ScriptedExecutor",
    "SubprocessExecutor",
    "Skill",
    "SkillLibrary",
    "TrajectoryAnalysis",
    "analyze_trajectories",
    "distill_cluster_skill",
    "learn_step",
    "load_library",
    "refine_skill",
    "save_library",
    "select_skill",
    "snapshot_library",
    "validate_skill_markdown",
]
