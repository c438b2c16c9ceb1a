"""Density clustering of archetype embeddings and partition diagnostics.

DBSCAN here is the classical algorithm specialized to cosine distance on
unit vectors: a point is core when at least ``min_samples`` points (itself
included) lie within ``epsilon`` (inclusive); clusters are the connected
components of core points; a non-core point with a core neighbor joins the
cluster of its nearest core point; everything else is noise (-1).

Implemented directly (O(n^2) distance matrix) rather than delegated so the
boundary conventions above are pinned by this code and cross-checked by a
brute-force reference in the tests.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from math import comb

import numpy as np

NOISE = -1


class EmptyInput(ValueError):
    """No points were supplied."""


class DimensionMismatch(ValueError):
    """Points do not share a common dimension."""


class LengthMismatch(ValueError):
    """Two label sequences differ in length."""


@dataclass(frozen=True)
class ClusterAssignment:
    """Labels per point (first-seen core order) plus the cluster count.

    Labels are 0..cluster_count-1 with -1 for noise.  ``canonical`` relabels
    clusters by their smallest member index, which makes assignments from
    different scan orders comparable.
    """

    labels: tuple[int, ...]
    cluster_count: int

    def __post_init__(self) -> None:
        distinct = {label for label in self.labels if label != NOISE}
        if distinct and (min(distinct) < 0 or max(distinct) >= self.cluster_count):
            raise ValueError("cluster label out of range")
        if len(distinct) != self.cluster_count:
            raise ValueError("cluster_count does not match distinct labels")

    def canonical(self) -> "ClusterAssignment":
        order: dict[int, int] = {}
        for index, label in enumerate(self.labels):
            if label != NOISE and label not in order:
                order[label] = index
        ranked = sorted(order, key=lambda label: order[label])
        remap = {old: new for new, old in enumerate(ranked)}
        relabeled = tuple(remap[l] if l != NOISE else NOISE for l in self.labels)
        return ClusterAssignment(relabeled, self.cluster_count)

    def members(self, label: int) -> list[int]:
        return [i for i, l in enumerate(self.labels) if l == label]

    def sizes(self) -> dict[int, int]:
        out: dict[int, int] = {}
        for label in self.labels:
            if label != NOISE:
                out[label] = out.get(label, 0) + 1
        return out


def _cosine_distance_matrix(points: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(points, axis=1)
    if np.any(norms < 1e-12):
        raise ValueError("zero vector has no cosine distance")
    unit = points / norms[:, None]
    dist = 1.0 - unit @ unit.T
    np.clip(dist, 0.0, 2.0, out=dist)
    np.fill_diagonal(dist, 0.0)
    return dist


def dbscan(points, epsilon: float, min_samples: int) -> ClusterAssignment:
    """Cluster embeddings with DBSCAN under cosine distance.

    ``points`` is a sequence of equal-dimension vectors (EmbeddingVector or
    array-like).  The epsilon ball is inclusive: distance exactly epsilon
    counts as a neighbor.  Cluster ids follow first-seen core order over
    the input sequence.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if min_samples < 1:
        raise ValueError("min_samples must be >= 1")
    rows = [p.as_array() if hasattr(p, "as_array") else np.asarray(p, dtype=np.float64) for p in points]
    if not rows:
        raise EmptyInput("no points to cluster")
    dims = {row.shape for row in rows}
    if len(dims) > 1 or rows[0].ndim != 1:
        raise DimensionMismatch(f"inconsistent point dimensions: {sorted(dims)}")
    matrix = np.vstack(rows)
    n = matrix.shape[0]
    dist = _cosine_distance_matrix(matrix)

    neighbor_mask = dist <= epsilon
    neighbor_counts = neighbor_mask.sum(axis=1)
    core = neighbor_counts >= min_samples

    labels = [NOISE] * n
    cluster_count = 0
    for start in range(n):
        if not core[start] or labels[start] != NOISE:
            continue
        label = cluster_count
        cluster_count += 1
        queue = deque([start])
        labels[start] = label
        while queue:
            current = queue.popleft()
            for neighbor in np.flatnonzero(neighbor_mask[current]):
                if core[neighbor] and labels[neighbor] == NOISE:
                    labels[neighbor] = label
                    queue.append(neighbor)

    # Border points: nearest core neighbor decides the cluster; exact ties
    # go to the smallest core index so scan order never matters.
    core_indices = np.flatnonzero(core)
    for i in range(n):
        if core[i] or core_indices.size == 0:
            continue
        candidates = core_indices[neighbor_mask[i, core_indices]]
        if candidates.size == 0:
            continue
        best = min(candidates, key=lambda j: (dist[i, j], j))
        labels[i] = labels[best]

    return ClusterAssignment(tuple(labels), cluster_count)


def _contingency(pred, truth) -> dict[tuple, int]:
    table: dict[tuple, int] = {}
    for p, t in zip(pred, truth):
        table[(p, t)] = table.get((p, t), 0) + 1
    return table


def adjusted_rand_index(pred, truth) -> float:
    """Chance-corrected agreement between two labelings of the same points.

    Computed from the pair-counting contingency table.  When the expected
    index equals the maximum index the usual formula is 0/0; by convention
    that is 1.0 if the labelings are identical as partitions and 0.0
    otherwise.
    """
    pred = list(pred)
    truth = list(truth)
    if len(pred) != len(truth):
        raise LengthMismatch(f"label lengths differ: {len(pred)} vs {len(truth)}")
    n = len(pred)
    if n < 2:
        raise EmptyInput("need at least two points")
    table = _contingency(pred, truth)
    pred_sizes: dict[object, int] = {}
    truth_sizes: dict[object, int] = {}
    for (p, t), count in table.items():
        pred_sizes[p] = pred_sizes.get(p, 0) + count
        truth_sizes[t] = truth_sizes.get(t, 0) + count

    sum_cells = sum(comb(c, 2) for c in table.values())
    sum_pred = sum(comb(c, 2) for c in pred_sizes.values())
    sum_truth = sum(comb(c, 2) for c in truth_sizes.values())
    total_pairs = comb(n, 2)

    expected = sum_pred * sum_truth / total_pairs
    maximum = (sum_pred + sum_truth) / 2.0
    if abs(maximum - expected) < 1e-15:
        return 1.0 if _same_partition(pred, truth) else 0.0
    return (sum_cells - expected) / (maximum - expected)


def _same_partition(pred, truth) -> bool:
    mapping: dict[object, object] = {}
    reverse: dict[object, object] = {}
    for p, t in zip(pred, truth):
        if mapping.setdefault(p, t) != t or reverse.setdefault(t, p) != p:
            return False
    return True


def pairwise_f1(pred, truth) -> float:
    """F1 over same-cluster point pairs.

    Precision counts predicted same-cluster pairs that are truly together;
    recall counts true pairs recovered.  Both-empty pair sets score 1.0;
    exactly one empty scores 0.0.
    """
    pred = list(pred)
    truth = list(truth)
    if len(pred) != len(truth):
        raise LengthMismatch(f"label lengths differ: {len(pred)} vs {len(truth)}")
    table = _contingency(pred, truth)
    pred_sizes: dict[object, int] = {}
    truth_sizes: dict[object, int] = {}
    for (p, t), count in table.items():
        pred_sizes[p] = pred_sizes.get(p, 0) + count
        truth_sizes[t] = truth_sizes.get(t, 0) + count
    pred_pairs = sum(comb(c, 2) for c in pred_sizes.values())
    truth_pairs = sum(comb(c, 2) for c in truth_sizes.values())
    both_pairs = sum(comb(c, 2) for c in table.values())
    if pred_pairs == 0 and truth_pairs == 0:
        return 1.0
    if pred_pairs == 0 or truth_pairs == 0:
        return 0.0
    precision = both_pairs / pred_pairs
    recall = both_pairs / truth_pairs
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)
