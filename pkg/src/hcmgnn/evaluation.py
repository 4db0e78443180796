"""Ranking metrics, degree stratification, silhouette, embedding export.

Each evaluated positive is ranked inside its own candidate pool (itself
plus sampled negatives).  Ties are resolved by descending score then
ascending candidate id, which makes every metric reproducible.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)

METRIC_KEYS = ("hit1", "hit3", "hit5", "ndcg1", "ndcg3", "ndcg5", "mrr")


@dataclass
class RankedCase:
    positive_id: str
    candidate_ids: list[str]   # positive first, then its negatives
    scores: np.ndarray         # aligned with candidate_ids
    rank: int                  # 1-based rank of the positive
    avg_degree: float | None = None


def resolve_rank(scores, candidate_ids, positive_index: int = 0) -> int:
    """1-based rank under the (score desc, candidate id asc) ordering."""
    scores = np.asarray(scores, dtype=np.float64)
    pos_score = scores[positive_index]
    pos_id = candidate_ids[positive_index]
    rank = 1
    for j, (s, cid) in enumerate(zip(scores, candidate_ids)):
        if j == positive_index:
            continue
        if s > pos_score or (s == pos_score and cid < pos_id):
            rank += 1
    return rank


def make_case(positive_id, negative_ids, scores, avg_degree=None) -> RankedCase:
    ids = [positive_id] + list(negative_ids)
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape[0] != len(ids):
        raise ValueError(f"make_case: {len(ids)} candidates but {scores.shape[0]} scores")
    return RankedCase(positive_id=positive_id, candidate_ids=ids, scores=scores,
                      rank=resolve_rank(scores, ids), avg_degree=avg_degree)


def rank_metrics(cases: list[RankedCase]) -> dict[str, float]:
    """Hit@{1,3,5}, NDCG@{1,3,5} (single relevant item) and MRR."""
    if not cases:
        raise ValueError("rank_metrics: empty case list")
    ranks = np.array([c.rank for c in cases], dtype=np.float64)
    out = {}
    for n in (1, 3, 5):
        hit = ranks <= n
        out[f"hit{n}"] = float(hit.mean())
        out[f"ndcg{n}"] = float(np.where(hit, 1.0 / np.log2(ranks + 1.0), 0.0).mean())
    out["mrr"] = float((1.0 / ranks).mean())
    return out


@dataclass
class StratumReport:
    threshold: float
    count: int
    hit1: float | None


def default_thresholds(cases: list[RankedCase], k: int = 12) -> list[float]:
    """k cumulative thresholds at the empirical avg-degree quantiles.

    Coincident quantiles are nudged so the list is strictly increasing and
    always has k entries.
    """
    degrees = np.array([c.avg_degree for c in cases], dtype=np.float64)
    qs = np.arange(1, k + 1) / k
    out = [float(x) for x in np.quantile(degrees, qs)]
    for i in range(1, k):
        if out[i] <= out[i - 1]:
            out[i] = out[i - 1] + 1e-9
    return out


def stratify_by_degree(cases: list[RankedCase], thresholds) -> list[StratumReport]:
    """Hit@1 inside each cumulative interval (0, N] of average node degree."""
    thresholds = list(thresholds)
    if any(b <= a for a, b in zip(thresholds, thresholds[1:])):
        raise ValueError("stratify_by_degree: thresholds must be strictly increasing")
    for c in cases:
        if c.avg_degree is None:
            raise ValueError(f"case {c.positive_id} lacks avg_degree")
    reports = []
    for n in thresholds:
        sub = [c for c in cases if 0.0 < c.avg_degree <= n]
        if sub:
            hit1 = float(np.mean([1.0 if c.rank <= 1 else 0.0 for c in sub]))
        else:
            hit1 = None
        reports.append(StratumReport(threshold=float(n), count=len(sub), hit1=hit1))
    return reports


def silhouette(embeddings, labels) -> float:
    """Mean silhouette over two classes with Euclidean distance.

    A point in a singleton class gets silhouette 0 (with a warning), and
    0/0 from coincident points resolves to 0.
    """
    x = np.asarray(embeddings, dtype=np.float64)
    y = np.asarray(labels)
    classes = np.unique(y)
    if classes.size != 2:
        raise ValueError(f"silhouette: need exactly 2 classes, got {classes.size}")
    # row-wise exact differences; the Gram-matrix shortcut loses precision
    dist = np.empty((x.shape[0], x.shape[0]))
    for i in range(x.shape[0]):
        dist[i] = np.sqrt(((x - x[i]) ** 2).sum(axis=1))

    scores = np.zeros(x.shape[0])
    for cls in classes:
        own = np.nonzero(y == cls)[0]
        other = np.nonzero(y != cls)[0]
        if own.size == 1:
            logger.warning("silhouette: class %r has a single point, scored 0", cls)
            continue
        for i in own:
            a = dist[i, own].sum() / (own.size - 1)
            b = dist[i, other].mean()
            denom = max(a, b)
            scores[i] = 0.0 if denom == 0.0 else (b - a) / denom
    return float(scores.mean())


def export_embeddings(path, triplet_ids, labels, vectors):
    """TSV rows `id<TAB>label<TAB>v1..vd`; floats round-trip exactly."""
    vectors = np.asarray(vectors, dtype=np.float64)
    if len(triplet_ids) != vectors.shape[0] or len(labels) != vectors.shape[0]:
        raise ValueError("export_embeddings: ids, labels and vectors must align")
    with open(path, "w", encoding="utf-8") as fh:
        for tid, label, vec in zip(triplet_ids, labels, vectors):
            vals = "\t".join(repr(float(v)) for v in vec)
            fh.write(f"{tid}\t{int(label)}\t{vals}\n")


def load_embeddings(path):
    ids, labels, vectors = [], [], []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.rstrip("\n").split("\t")
            ids.append(parts[0])
            labels.append(int(parts[1]))
            vectors.append([float(v) for v in parts[2:]])
    return ids, np.array(labels), np.array(vectors, dtype=np.float64)
