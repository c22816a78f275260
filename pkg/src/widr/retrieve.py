"""Leave-one-out Euclidean retrieval and the mAP / hard TOP-k metrics."""
from __future__ import annotations

import csv
import json
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class NoRelevantError(ValueError):
    pass


@dataclass(frozen=True)
class RankedList:
    query: str
    candidates: tuple[str, ...]
    distances: tuple[float, ...]

    def relevance(self, writers: Mapping[str, str]) -> list[bool]:
        w = writers[self.query]
        return [writers[c] == w for c in self.candidates]


@dataclass
class MetricsReport:
    map_value: float
    hard_top_k: dict[int, float | None]
    per_query_ap: dict[str, float]
    skipped: list[str] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "mAP": self.map_value,
            "hard_top_k": {str(k): v for k, v in self.hard_top_k.items()},
            "per_query_ap": self.per_query_ap,
            "skipped_queries": self.skipped,
            "notes": self.notes,
        }

    def rows(self) -> list[tuple[str, str, float | str]]:
        rows: list[tuple[str, str, float | str]] = [("mAP", "", self.map_value)]
        for k, v in self.hard_top_k.items():
            rows.append(("hard_top_k", str(k), "N/A" if v is None else v))
        return rows


def _as_matrix(descriptors: Mapping[str, np.ndarray]) -> tuple[list[str], np.ndarray]:
    ids = sorted(descriptors)
    lengths = {np.asarray(descriptors[i]).size for i in ids}
    if len(lengths) != 1:
        raise ValueError(f"descriptor lengths differ: {sorted(lengths)}")
    return ids, np.stack([np.asarray(descriptors[i], dtype=np.float64).ravel() for i in ids])


def rank_all(descriptors: Mapping[str, np.ndarray]) -> list[RankedList]:
    """Rank every other document for each query by ascending Euclidean distance.

    Ties go to the lexicographically smaller doc_id.
    """
    if len(descriptors) < 2:
        raise ValueError("ranking needs at least two documents")
    ids, x = _as_matrix(descriptors)
    out = []
    positions = np.arange(len(ids))
    for qi, q in enumerate(ids):
        diff = x - x[qi]
        dist = np.sqrt((diff * diff).sum(axis=1))
        keep = positions != qi
        # ids are sorted, so position order is doc_id order
        order = np.lexsort((positions[keep], dist[keep]))
        cand = positions[keep][order]
        out.append(RankedList(q, tuple(ids[c] for c in cand), tuple(float(d) for d in dist[cand])))
    return out


def average_precision(relevant: Sequence[bool]) -> float:
    """Mean of precision@k over the ranks k holding a relevant document."""
    hits = 0
    total = 0.0
    for k, rel in enumerate(relevant, start=1):
        if rel:
            hits += 1
            total += hits / k
    if hits == 0:
        raise NoRelevantError("no relevant documents")
    return total / hits


def mean_ap(values: Sequence[float]) -> float:
    if len(values) == 0:
        raise ValueError("mean_ap of an empty query set")
    return float(sum(values) / len(values))


def hard_top_k(relevance_by_query: Mapping[str, Sequence[bool]], k: int) -> float:
    """Fraction of queries whose top k results all share the query's writer."""
    if k < 1:
        raise ValueError("k must be positive")
    if not relevance_by_query:
        raise ValueError("hard_top_k of an empty query set")
    hits = 0
    for q, rel in relevance_by_query.items():
        if k > sum(bool(r) for r in rel):
            raise ValueError(f"query {q!r}: top-{k} infeasible, only {sum(map(bool, rel))} same-writer candidates")
        hits += all(rel[:k])
    return hits / len(relevance_by_query)


def evaluate(
    descriptors: Mapping[str, np.ndarray],
    writers: Mapping[str, str],
    top_k: Sequence[int] = (1, 2, 3),
) -> MetricsReport:
    """Rank all documents and summarize. Queries without a same-writer
    candidate are skipped and listed; infeasible TOP-k values are None."""
    relevance = {}
    per_query = {}
    skipped = []
    for ranked in rank_all(descriptors):
        rel = ranked.relevance(writers)
        try:
            per_query[ranked.query] = average_precision(rel)
        except NoRelevantError:
            skipped.append(ranked.query)
            continue
        relevance[ranked.query] = rel
    if not per_query:
        raise ValueError("no query has a relevant document")
    tops: dict[int, float | None] = {}
    for k in top_k:
        try:
            tops[k] = hard_top_k(relevance, k)
        except ValueError:
            tops[k] = None
    return MetricsReport(mean_ap(list(per_query.values())), tops, per_query, skipped)


def ensemble_concat(streams: Sequence[Mapping[str, np.ndarray]]) -> dict[str, np.ndarray]:
    """Concatenate per-document descriptors from several models.

    Each stream is first divided by its overall l2 (Frobenius) norm across
    documents; all-zero streams are kept as zeros.
    """
    if not streams:
        raise ValueError("no descriptor streams")
    ids = sorted(streams[0])
    for s in streams[1:]:
        if sorted(s) != ids:
            raise ValueError("descriptor streams cover different document sets")
    parts = []
    for s in streams:
        _, x = _as_matrix(s)
        norm = np.linalg.norm(x)
        parts.append(x / norm if norm > 0 else x)
    joined = np.concatenate(parts, axis=1)
    return {doc: joined[i] for i, doc in enumerate(ids)}


def write_report(report: MetricsReport, csv_path: str | Path, json_path: str | Path) -> None:
    with Path(csv_path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "k", "value"])
        for metric, k, value in report.rows():
            w.writerow([metric, k, value if isinstance(value, str) else f"{value:.6f}"])
    Path(json_path).write_text(json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
