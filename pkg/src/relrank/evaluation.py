"""Ranking metrics (MAP, P@20, nDCG@20) and a stratified shuffling
significance test.

Metric semantics follow trec_eval: average precision divides by the total
number of judged-relevant documents for the query, precision at k keeps the
fixed denominator k, and nDCG uses binary gains with the ideal ranking taken
from the judgments.  Queries with no judged-relevant documents are dropped
from every mean.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError
from .trec import Qrels, RankedList

log = logging.getLogger(__name__)

DEFAULT_PERMUTATIONS = 10_000


def average_precision(doc_ids, relevant_docs, total_relevant: int) -> float:
    """Sum of precision at each relevant hit, over all judged-relevant docs.

    ``total_relevant`` may exceed the hits reachable from ``doc_ids``; that
    is the point (relevant documents missing from the candidates cap AP
    below one).
    """
    if total_relevant < 1:
        raise ValueError("average precision needs at least one relevant doc")
    hits = 0
    total = 0.0
    for rank, doc_id in enumerate(doc_ids, 1):
        if doc_id in relevant_docs:
            hits += 1
            total += hits / rank
    return total / total_relevant


def precision_at_k(doc_ids, relevant_docs, k: int = 20) -> float:
    """Relevant count in the top k over a fixed denominator k."""
    if k < 1:
        raise ConfigError(f"precision cutoff must be >= 1, got {k}")
    hits = sum(1 for doc_id in doc_ids[:k] if doc_id in relevant_docs)
    return hits / k


def dcg_at_k(doc_ids, relevant_docs, k: int) -> float:
    return sum(1.0 / math.log2(rank + 1)
               for rank, doc_id in enumerate(doc_ids[:k], 1)
               if doc_id in relevant_docs)


def ndcg_at_k(doc_ids, relevant_docs, k: int = 20) -> float:
    """Binary-gain nDCG; zero when the query has no relevant documents."""
    if k < 1:
        raise ConfigError(f"nDCG cutoff must be >= 1, got {k}")
    ideal_hits = min(k, len(relevant_docs))
    if ideal_hits == 0:
        return 0.0
    idcg = sum(1.0 / math.log2(rank + 1) for rank in range(1, ideal_hits + 1))
    return dcg_at_k(doc_ids, relevant_docs, k) / idcg


@dataclass
class QueryMetrics:
    ap: float
    p20: float
    ndcg20: float


@dataclass
class MetricsReport:
    """Per-query and aggregate metrics for one run."""

    run_tag: str
    per_query: dict[str, QueryMetrics]
    skipped: list[str] = field(default_factory=list)

    METRICS = ("map", "p20", "ndcg20")

    def _column(self, name: str) -> np.ndarray:
        attr = "ap" if name == "map" else name
        return np.array([getattr(m, attr) for m in self.per_query.values()])

    def mean(self, name: str) -> float:
        col = self._column(name)
        return float(col.mean()) if col.size else 0.0

    def std(self, name: str) -> float:
        col = self._column(name)
        return float(col.std()) if col.size else 0.0

    @property
    def map(self) -> float:
        return self.mean("map")

    @property
    def p20(self) -> float:
        return self.mean("p20")

    @property
    def ndcg20(self) -> float:
        return self.mean("ndcg20")

    def per_query_values(self, name: str) -> dict[str, float]:
        attr = "ap" if name == "map" else name
        return {qid: getattr(m, attr) for qid, m in self.per_query.items()}

    def to_json(self) -> dict:
        return {
            "run": self.run_tag,
            "queries_evaluated": len(self.per_query),
            "queries_skipped": sorted(self.skipped),
            "mean": {name: self.mean(name) for name in self.METRICS},
            "std": {name: self.std(name) for name in self.METRICS},
            "per_query": {
                qid: {"ap": m.ap, "p20": m.p20, "ndcg20": m.ndcg20}
                for qid, m in sorted(self.per_query.items())
            },
        }

    def format_table(self) -> str:
        """Aligned-column text report, one row per query plus aggregates."""
        rows = [("query", "ap", "p@20", "ndcg@20")]
        for qid in sorted(self.per_query):
            m = self.per_query[qid]
            rows.append((qid, f"{m.ap:.4f}", f"{m.p20:.4f}", f"{m.ndcg20:.4f}"))
        rows.append(("mean", f"{self.map:.4f}", f"{self.p20:.4f}",
                     f"{self.ndcg20:.4f}"))
        rows.append(("std", f"{self.std('map'):.4f}", f"{self.std('p20'):.4f}",
                     f"{self.std('ndcg20'):.4f}"))
        widths = [max(len(row[col]) for row in rows) for col in range(4)]
        lines = ["  ".join(cell.ljust(width) for cell, width in zip(row, widths)).rstrip()
                 for row in rows]
        lines.insert(1, "  ".join("-" * width for width in widths))
        footer = f"({len(self.per_query)} queries evaluated"
        if self.skipped:
            footer += f", {len(self.skipped)} skipped"
        lines.append(footer + ")")
        return "\n".join(lines)


def evaluate_ranking(ranked: RankedList, qrels: Qrels) -> QueryMetrics:
    relevant = qrels.relevant_docs(ranked.query_id)
    doc_ids = ranked.doc_ids()
    return QueryMetrics(
        ap=average_precision(doc_ids, relevant, len(relevant)),
        p20=precision_at_k(doc_ids, relevant),
        ndcg20=ndcg_at_k(doc_ids, relevant),
    )


def evaluate_run(run: list[RankedList], qrels: Qrels,
                 run_tag: str = "run") -> MetricsReport:
    """Score every ranked list with judged-relevant documents.

    Queries absent from the judgments, or judged with zero relevant
    documents, are skipped with a warning and excluded from all means.
    """
    per_query: dict[str, QueryMetrics] = {}
    skipped = []
    for ranked in run:
        qid = ranked.query_id
        if qid in per_query:
            raise DataError(f"run {run_tag!r} lists query {qid} twice")
        if not qrels.relevant_docs(qid):
            reason = ("no judgments" if qid not in qrels
                      else "no relevant documents")
            log.warning("skipping query %s: %s", qid, reason)
            skipped.append(qid)
            continue
        per_query[qid] = evaluate_ranking(ranked, qrels)
    return MetricsReport(run_tag, per_query, skipped)


@dataclass
class SignificanceResult:
    metric: str
    observed_difference: float
    p_value: float
    permutations: int

    def to_json(self) -> dict:
        return {
            "metric": self.metric,
            "observed_difference": self.observed_difference,
            "p_value": self.p_value,
            "permutations": self.permutations,
        }


def stratified_shuffle_test(per_query_a, per_query_b,
                            permutations: int = DEFAULT_PERMUTATIONS,
                            seed: int = 0,
                            metric: str = "map") -> SignificanceResult:
    """Two-tailed randomization test over paired per-query metric values.

    Each permutation swaps the two systems' values independently per query
    with probability one half; the p-value is the add-one-smoothed fraction
    of permutations whose absolute mean difference reaches the observed one.
    """
    if permutations < 1:
        raise ConfigError(f"need at least one permutation, got {permutations}")
    if set(per_query_a) != set(per_query_b):
        raise DataError("significance test needs identical query sets")
    queries = sorted(per_query_a)
    if not queries:
        raise DataError("significance test needs at least one query")
    diff = np.array([per_query_a[q] - per_query_b[q] for q in queries])
    observed = float(diff.mean())
    target = abs(observed)
    rng = np.random.default_rng(seed)
    count = 0
    done = 0
    while done < permutations:
        block = min(1000, permutations - done)
        signs = rng.integers(0, 2, size=(block, len(queries))) * 2 - 1
        count += int(np.sum(np.abs((signs * diff).mean(axis=1)) >= target))
        done += block
    p = (count + 1) / (permutations + 1)
    return SignificanceResult(metric, observed, p, permutations)
