"""Answer matching, Pass@1 aggregation, and embedding retrieval metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np


class NonFinite(ValueError):
    """A compared value was NaN or infinite."""


class EmptyInput(ValueError):
    """No usable data was supplied."""


class LengthMismatch(ValueError):
    """Parallel sequences differ in length."""


@dataclass(frozen=True)
class MatchTolerance:
    """Mixed absolute/relative tolerance for numeric answer comparison."""

    absolute: float = 1e-6
    relative: float = 1e-4

    def __post_init__(self) -> None:
        if self.absolute < 0 or self.relative < 0:
            raise ValueError("tolerances must be non-negative")


def answers_match(predicted: float, truth: float, tolerance: MatchTolerance | None = None) -> bool:
    """True when |predicted - truth| <= max(atol, rtol * |truth|)."""
    tol = tolerance or MatchTolerance()
    if not (math.isfinite(predicted) and math.isfinite(truth)):
        raise NonFinite(f"cannot compare non-finite values {predicted} and {truth}")
    bound = max(tol.absolute, tol.relative * abs(truth))
    return abs(predicted - truth) <= bound


def pass_at_1(results: Mapping[str, Sequence[bool]]) -> tuple[float, float]:
    """Aggregate per-benchmark correctness flags into (micro, macro) Pass@1.

    Micro pools every attempt; macro averages per-benchmark accuracies.
    Benchmarks with no attempts are ignored; at least one attempt must
    exist overall.
    """
    accuracies = []
    correct = 0
    total = 0
    for name in results:
        flags = list(results[name])
        if not flags:
            continue
        correct += sum(bool(f) for f in flags)
        total += len(flags)
        accuracies.append(sum(bool(f) for f in flags) / len(flags))
    if total == 0:
        raise EmptyInput("no benchmark results to aggregate")
    micro = correct / total
    macro = sum(accuracies) / len(accuracies)
    return micro, macro


@dataclass(frozen=True)
class RetrievalReport:
    """Mean retrieval quality over all evaluable queries.

    ``skipped_queries`` counts queries whose label group is a singleton;
    they contribute to no metric.
    """

    hit_at: dict[int, float] = field(default_factory=dict)
    precision_at: dict[int, float] = field(default_factory=dict)
    recall_at: dict[int, float] = field(default_factory=dict)
    map_at: dict[int, float] = field(default_factory=dict)
    mrr: float = 0.0
    query_count: int = 0
    skipped_queries: int = 0

    def to_record(self) -> dict:
        return {
            "hit_at": {str(k): v for k, v in sorted(self.hit_at.items())},
            "precision_at": {str(k): v for k, v in sorted(self.precision_at.items())},
            "recall_at": {str(k): v for k, v in sorted(self.recall_at.items())},
            "map_at": {str(k): v for k, v in sorted(self.map_at.items())},
            "mrr": self.mrr,
            "query_count": self.query_count,
            "skipped_queries": self.skipped_queries,
        }


def retrieval_metrics(embeddings, labels, ks: Sequence[int] = (1, 3, 5)) -> RetrievalReport:
    """Leave-one-out nearest-neighbor retrieval quality by cosine similarity.

    Each point queries all others (self excluded), ranked by descending
    similarity with ties broken by ascending index.  A neighbor is relevant
    when it shares the query's label.  Reported per cutoff k: hit rate,
    precision (relevant/k), recall (relevant/(group size - 1)), and MAP
    with average precision truncated at k and normalized by
    min(group size - 1, k); MRR uses the first relevant rank, cutoff-free.
    Singleton-label queries are skipped and tallied.
    """
    ks = sorted(set(int(k) for k in ks))
    if not ks or ks[0] < 1:
        raise ValueError("cutoffs must be positive integers")
    rows = [e.as_array() if hasattr(e, "as_array") else np.asarray(e, dtype=np.float64) for e in embeddings]
    labels = list(labels)
    if len(rows) != len(labels):
        raise LengthMismatch(f"{len(rows)} embeddings vs {len(labels)} labels")
    if len(rows) < 2:
        raise EmptyInput("need at least two points")
    if len({row.shape for row in rows}) > 1:
        raise ValueError("inconsistent embedding dimensions")
    matrix = np.vstack(rows)
    norms = np.linalg.norm(matrix, axis=1)
    if np.any(norms < 1e-12):
        raise ValueError("zero vector cannot be ranked by cosine similarity")
    unit = matrix / norms[:, None]
    sims = unit @ unit.T

    group_size: dict[object, int] = {}
    for label in labels:
        group_size[label] = group_size.get(label, 0) + 1

    n = len(labels)
    hit_sums = {k: 0.0 for k in ks}
    prec_sums = {k: 0.0 for k in ks}
    rec_sums = {k: 0.0 for k in ks}
    ap_sums = {k: 0.0 for k in ks}
    rr_sum = 0.0
    evaluated = 0
    skipped = 0

    for q in range(n):
        relevant_total = group_size[labels[q]] - 1
        if relevant_total == 0:
            skipped += 1
            continue
        evaluated += 1
        others = [i for i in range(n) if i != q]
        # descending similarity, ascending index on exact ties
        others.sort(key=lambda i: (-sims[q, i], i))
        relevance = [labels[i] == labels[q] for i in others]

        first_hit = next((r for r, rel in enumerate(relevance) if rel), None)
        if first_hit is not None:
            rr_sum += 1.0 / (first_hit + 1)

        for k in ks:
            top = relevance[:k]
            hits = sum(top)
            hit_sums[k] += 1.0 if hits > 0 else 0.0
            prec_sums[k] += hits / k
            rec_sums[k] += hits / relevant_total
            running = 0
            ap = 0.0
            for rank, rel in enumerate(top, start=1):
                if rel:
                    running += 1
                    ap += running / rank
            ap_sums[k] += ap / min(relevant_total, k)

    if evaluated == 0:
        raise EmptyInput("every query had a singleton label group")

    return RetrievalReport(
        hit_at={k: hit_sums[k] / evaluated for k in ks},
        precision_at={k: prec_sums[k] / evaluated for k in ks},
        recall_at={k: rec_sums[k] / evaluated for k in ks},
        map_at={k: ap_sums[k] / evaluated for k in ks},
        mrr=rr_sum / evaluated,
        query_count=evaluated,
        skipped_queries=skipped,
    )
