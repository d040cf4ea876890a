"""Retrieval quality criteria: AP/MAP, precision-recall over Hamming radius,
and topN-precision, all under the share-at-least-one-label relevance rule.

Conventions, applied per query and documented here once:
  - a query with zero relevant items in the retrieved set scores AP 0 and
    still counts in the MAP mean;
  - an empty retrieval set at some radius yields precision 1.0 (vacuous);
  - a query with zero relevant items in the database yields recall 1.0.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .encoder import EncoderParams
from .retrieval import RetrievalIndex, encode_out_of_sample, query_distances, rank


@dataclass
class QuerySet:
    """Query-modality features (d, m) with labels and optional identifiers."""

    features: np.ndarray
    labels: list[frozenset]
    ids: list[str] | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise ValueError("query features must be a (dim, m) matrix")
        m = self.features.shape[1]
        if m < 1:
            raise ValueError("query set must contain at least one query")
        self.labels = [frozenset(ls) for ls in self.labels]
        if len(self.labels) != m:
            raise ValueError(f"got {len(self.labels)} label sets for {m} queries")
        if self.ids is not None and len(self.ids) != m:
            raise ValueError(f"got {len(self.ids)} ids for {m} queries")


@dataclass(frozen=True)
class EvalReport:
    map: float
    pr_curve: list[tuple[float, float]]
    topn_curve: list[tuple[int, float]]


def is_relevant(query_labels: Iterable, item_labels: Iterable) -> bool:
    return bool(frozenset(query_labels) & frozenset(item_labels))


def average_precision(
    ranked_relevance: Sequence[int], r_cap: int | None = None
) -> float:
    """Mean of precision-at-r over the relevant ranks within the top r_cap."""
    rel = np.asarray(ranked_relevance, dtype=np.float64)
    if rel.ndim != 1 or rel.size == 0:
        raise ValueError("ranked_relevance must be a non-empty 1-D sequence")
    if r_cap is not None:
        if not 1 <= r_cap <= rel.size:
            raise ValueError(f"r_cap must be in 1..{rel.size}, got {r_cap}")
        rel = rel[:r_cap]
    n_rel = rel.sum()
    if n_rel == 0:
        return 0.0
    precision_at = np.cumsum(rel) / np.arange(1, rel.size + 1)
    return float((precision_at * rel).sum() / n_rel)


def _require_labels(index: RetrievalIndex) -> list[frozenset]:
    if index.labels is None:
        raise ValueError("index has no labels; evaluation needs them")
    return index.labels


def _ranked_relevance(
    index: RetrievalIndex,
    query_code: np.ndarray,
    query_labels: frozenset,
    query_id: str | None,
    exclude_self: bool,
) -> np.ndarray:
    labels = _require_labels(index)
    by_id = {item_id: i for i, item_id in enumerate(index.ids)}
    ranked = rank(index, query_code)
    out = []
    for item_id, _dist in ranked:
        if exclude_self and query_id is not None and item_id == query_id:
            continue
        out.append(1 if query_labels & labels[by_id[item_id]] else 0)
    return np.asarray(out, dtype=np.int64)


def mean_average_precision(
    queries: QuerySet,
    index: RetrievalIndex,
    params: EncoderParams,
    r_cap: int | None = None,
    exclude_self: bool = True,
) -> float:
    """Mean AP over the query set against the cross-modal code database."""
    codes = encode_out_of_sample(params, queries.features)
    aps = []
    for j in range(codes.shape[1]):
        qid = queries.ids[j] if queries.ids is not None else None
        relevance = _ranked_relevance(
            index, codes[:, j], queries.labels[j], qid, exclude_self
        )
        aps.append(average_precision(relevance, r_cap))
    return float(np.mean(aps))


def precision_recall_curve(
    queries: QuerySet,
    index: RetrievalIndex,
    params: EncoderParams,
    exclude_self: bool = True,
) -> list[tuple[float, float]]:
    """One (recall, precision) point per Hamming radius 0..k, query-averaged."""
    labels = _require_labels(index)
    codes = encode_out_of_sample(params, queries.features)
    k = index.code_length
    precisions = np.zeros(k + 1)
    recalls = np.zeros(k + 1)
    m = codes.shape[1]
    for j in range(m):
        dists = query_distances(index, codes[:, j])
        rel = np.array([1.0 if queries.labels[j] & ls else 0.0 for ls in labels])
        keep = np.ones(len(index), dtype=bool)
        if exclude_self and queries.ids is not None:
            qid = queries.ids[j]
            keep = np.array([item_id != qid for item_id in index.ids])
        d, r = dists[keep], rel[keep]
        counts = np.cumsum(np.bincount(d, minlength=k + 1))
        rel_counts = np.cumsum(np.bincount(d, weights=r, minlength=k + 1))
        total_rel = r.sum()
        with np.errstate(invalid="ignore"):
            prec = np.where(counts > 0, rel_counts / np.maximum(counts, 1), 1.0)
            reca = (
                rel_counts / total_rel if total_rel > 0 else np.ones(k + 1)
            )
        precisions += prec
        recalls += reca
    precisions /= m
    recalls /= m
    return [(float(recalls[r]), float(precisions[r])) for r in range(k + 1)]


def topn_precision_curve(
    queries: QuerySet,
    index: RetrievalIndex,
    params: EncoderParams,
    n_values: Sequence[int],
    exclude_self: bool = True,
) -> list[tuple[int, float]]:
    """precision@n averaged over queries, in rank() order."""
    n_values = list(n_values)
    if sorted(n_values) != n_values:
        raise ValueError("n_values must be sorted ascending")
    codes = encode_out_of_sample(params, queries.features)
    m = codes.shape[1]
    sums = np.zeros(len(n_values))
    for j in range(m):
        qid = queries.ids[j] if queries.ids is not None else None
        relevance = _ranked_relevance(
            index, codes[:, j], queries.labels[j], qid, exclude_self
        )
        for t, n in enumerate(n_values):
            if not 1 <= n <= relevance.size:
                raise ValueError(
                    f"n={n} outside 1..{relevance.size} retrievable items"
                )
            sums[t] += relevance[:n].mean()
    return [(n, float(sums[t] / m)) for t, n in enumerate(n_values)]


def evaluate(
    queries: QuerySet,
    index: RetrievalIndex,
    params: EncoderParams,
    n_values: Sequence[int] | None = None,
    r_cap: int | None = None,
    exclude_self: bool = True,
) -> EvalReport:
    """Full report: MAP, PR curve, and topN curve in one pass."""
    if n_values is None:
        db = len(index) - (1 if exclude_self and queries.ids is not None else 0)
        n_values = sorted({max(1, round(db * f / 10)) for f in range(1, 11)})
    return EvalReport(
        map=mean_average_precision(queries, index, params, r_cap, exclude_self),
        pr_curve=precision_recall_curve(queries, index, params, exclude_self),
        topn_curve=topn_precision_curve(queries, index, params, n_values, exclude_self),
    )


def write_map_csv(path, value: float) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["map"])
        writer.writerow([repr(value)])


def write_pr_csv(path, pr_curve: Sequence[tuple[float, float]]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["radius", "recall", "precision"])
        for radius, (recall, precision) in enumerate(pr_curve):
            writer.writerow([radius, repr(recall), repr(precision)])


def write_topn_csv(path, topn_curve: Sequence[tuple[int, float]]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["n", "precision"])
        for n, precision in topn_curve:
            writer.writerow([n, repr(precision)])


def write_report(report: EvalReport, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_map_csv(out / "map.csv", report.map)
    write_pr_csv(out / "pr_curve.csv", report.pr_curve)
    write_topn_csv(out / "topn.csv", report.topn_curve)
