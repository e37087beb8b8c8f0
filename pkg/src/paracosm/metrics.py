"""Retrieval metrics: Recall@k, subset Recall@k, mAP@k, and the report grid.

Definitions (per query, then averaged over queries):

    Recall@k        1 if any ground-truth target appears in the top k, else 0.
    Recall_Subset@k Recall@k where ranking is restricted to the query's
                    curated subset of visually similar images.
    AP@k            (1 / min(|GT|, k)) * sum_{i<=k} Precision@i * rel(i),
                    rel(i) = 1 iff the rank-i item is a ground-truth target.

Each metric has a brute-force twin in the test suite that re-sorts raw
scores and counts by enumeration; the implementations here must agree with
those oracles to 1e-12.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

from .config import AblationConfig
from .datasets import QueryRecord
from .errors import EmptyGT, LengthMismatch, MissingSubset
from .fusion import QueryFeature, RankedResult, rank_subset
from .store import FeatureStore

METRIC_GRID = {
    "cirr": {"recall": (1, 5, 10, 50), "recall_subset": (1, 2, 3)},
    "circo": {"map": (5, 10, 25, 50)},
    "fashioniq": {"recall": (10, 50)},
    "generic": {"recall": (1, 5, 10)},
}


def _check_lengths(rankings: Sequence[Sequence[RankedResult]], records: Sequence[QueryRecord]):
    if len(rankings) != len(records):
        raise LengthMismatch(f"{len(rankings)} rankings for {len(records)} records")


def recall_at_k(
    rankings: Sequence[Sequence[RankedResult]], records: Sequence[QueryRecord], k: int
) -> float:
    """Fraction of queries with at least one target in the top k."""
    _check_lengths(rankings, records)
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    hits = 0
    for ranking, record in zip(rankings, records):
        gt = set(record.gt_target_ids)
        if not gt:
            raise EmptyGT(f"query {record.query_id!r} has no targets")
        if any(r.image_id in gt for r in ranking[:k]):
            hits += 1
    return hits / len(records)


def subset_rankings_from_global(
    rankings: Sequence[Sequence[RankedResult]], records: Sequence[QueryRecord]
) -> list[list[RankedResult]]:
    """Restrict full-gallery rankings to each record's subset.

    Restriction preserves scores and relative order, so this equals scoring
    the subset directly (rank_subset); it just reuses work already done.
    """
    _check_lengths(rankings, records)
    out: list[list[RankedResult]] = []
    for ranking, record in zip(rankings, records):
        if record.subset_ids is None:
            raise MissingSubset(f"query {record.query_id!r} carries no subset ids")
        subset = set(record.subset_ids)
        kept = [r for r in ranking if r.image_id in subset]
        if len(kept) != len(subset):
            raise MissingSubset(
                f"query {record.query_id!r}: ranking covers {len(kept)}/{len(subset)} "
                "subset members; pass full-gallery rankings"
            )
        out.append(
            [RankedResult(r.image_id, r.score, i + 1) for i, r in enumerate(kept)]
        )
    return out


def recall_subset_at_k(
    features: Sequence[QueryFeature],
    store: FeatureStore,
    records: Sequence[QueryRecord],
    k: int,
) -> float:
    """Recall@k inside each query's curated subset, scored from the store."""
    _check_lengths(features, records)
    rankings = []
    for feature, record in zip(features, records):
        if record.subset_ids is None:
            raise MissingSubset(f"query {record.query_id!r} carries no subset ids")
        rankings.append(rank_subset(feature, store, list(record.subset_ids)))
    return recall_at_k(rankings, records, k)


def average_precision_at_k(
    ranking: Sequence[RankedResult], gt_ids: Sequence[str], k: int
) -> float:
    """AP@k for one query; normalizer is min(|GT|, k)."""
    gt = set(gt_ids)
    if not gt:
        raise EmptyGT("average precision needs at least one target")
    hits = 0
    total = 0.0
    for i, result in enumerate(ranking[:k], start=1):
        if result.image_id in gt:
            hits += 1
            total += hits / i
    return total / min(len(gt), k)


def map_at_k(
    rankings: Sequence[Sequence[RankedResult]], records: Sequence[QueryRecord], k: int
) -> float:
    """Mean AP@k over all queries."""
    _check_lengths(rankings, records)
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    return sum(
        average_precision_at_k(ranking, record.gt_target_ids, k)
        for ranking, record in zip(rankings, records)
    ) / len(records)


@dataclass(frozen=True)
class EvalReport:
    """One evaluation run: the metric grid plus per-query diagnostics."""

    dataset: str
    config_digest: str
    n_queries: int
    metrics: dict[str, float]
    per_query: list[dict] = field(default_factory=list)

    def to_json(self) -> str:
        payload = {
            "dataset": self.dataset,
            "config_digest": self.config_digest,
            "n_queries": self.n_queries,
            "metrics": self.metrics,
            "per_query": self.per_query,
        }
        return json.dumps(payload, sort_keys=True, separators=(",", ":")) + "\n"


def _best_rank(ranking: Sequence[RankedResult], gt: set[str]) -> int | None:
    for r in ranking:
        if r.image_id in gt:
            return r.rank
    return None


def evaluate(
    dataset_kind: str,
    records: Sequence[QueryRecord],
    rankings: Sequence[Sequence[RankedResult]],
    config: AblationConfig,
    *,
    ks: Sequence[int] | None = None,
    config_digest: str | None = None,
) -> EvalReport:
    """Compute the dataset's metric grid over per-query rankings.

    The grid follows the benchmark conventions: CIRR reports Recall@{1,5,10,50}
    plus subset Recall@{1,2,3}; CIRCO reports mAP@{5,10,25,50}; Fashion IQ
    reports Recall@{10,50} per category plus their average. ``ks`` overrides
    the recall/map cutoffs for ad-hoc datasets.
    """
    _check_lengths(rankings, records)
    if not records:
        raise LengthMismatch("cannot evaluate zero queries")
    grid = METRIC_GRID.get(dataset_kind, METRIC_GRID["generic"])
    if ks is not None:
        if len(ks) == 0:
            raise ValueError("ks must not be empty")
        primary = "map" if "map" in grid else "recall"
        grid = {**grid, primary: tuple(ks)}

    metrics: dict[str, float] = {}
    if dataset_kind == "fashioniq":
        categories = sorted({r.category for r in records if r.category})
        if not categories:
            raise MissingSubset("fashioniq evaluation needs per-record categories")
        for k in grid["recall"]:
            per_cat = {}
            for cat in categories:
                idx = [i for i, r in enumerate(records) if r.category == cat]
                per_cat[cat] = recall_at_k([rankings[i] for i in idx], [records[i] for i in idx], k)
                metrics[f"recall@{k}/{cat}"] = per_cat[cat]
            metrics[f"recall@{k}/average"] = sum(per_cat.values()) / len(per_cat)
    else:
        for k in grid.get("recall", ()):
            metrics[f"recall@{k}"] = recall_at_k(rankings, records, k)
        for k in grid.get("map", ()):
            metrics[f"map@{k}"] = map_at_k(rankings, records, k)
        if "recall_subset" in grid:
            sub = subset_rankings_from_global(rankings, records)
            for k in grid["recall_subset"]:
                metrics[f"recall_subset@{k}"] = recall_at_k(sub, records, k)

    per_query = []
    for ranking, record in zip(rankings, records):
        gt = set(record.gt_target_ids)
        entry: dict = {"query_id": record.query_id, "best_rank": _best_rank(ranking, gt)}
        if record.subset_ids is not None and "recall_subset" in grid:
            sub = subset_rankings_from_global([ranking], [record])[0]
            entry["subset_best_rank"] = _best_rank(sub, gt)
        per_query.append(entry)

    return EvalReport(
        dataset=dataset_kind,
        config_digest=config_digest if config_digest is not None else config.digest(),
        n_queries=len(records),
        metrics=metrics,
        per_query=per_query,
    )
