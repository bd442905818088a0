"""Recall / MRR / nDCG at cutoffs, seen-unseen split and collision subset."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .corpus import QrelSet
from .fileio import atomic_write_text
from .id_index import IdentifierTrie


def _ids(ranked) -> list[str]:
    return ranked.doc_ids if hasattr(ranked, "doc_ids") else list(ranked)


def recall_at_k(ranked, relevant: set[str], k: int) -> float:
    if k < 1:
        raise ValueError("k must be >= 1")
    if not relevant:
        raise ValueError("recall is undefined without relevant documents")
    return len(set(_ids(ranked)[:k]) & relevant) / len(relevant)


def mrr_at_k(ranked, relevant: set[str], k: int) -> float:
    if k < 1:
        raise ValueError("k must be >= 1")
    if not relevant:
        raise ValueError("MRR is undefined without relevant documents")
    for i, d in enumerate(_ids(ranked)[:k], 1):
        if d in relevant:
            return 1.0 / i
    return 0.0


def dcg(grades: Sequence[int]) -> float:
    return sum((2.0**g - 1.0) / math.log2(i + 1) for i, g in enumerate(grades, 1))


def ndcg_at_k(ranked, grades: Mapping[str, int], k: int) -> float:
    """DCG over the top-k with gain 2^g - 1, normalised by the ideal ordering."""
    if k < 1:
        raise ValueError("k must be >= 1")
    ideal = dcg(sorted((g for g in grades.values() if g > 0), reverse=True)[:k])
    if ideal == 0:
        raise ValueError("nDCG is undefined when every grade is zero")
    return dcg([grades.get(d, 0) for d in _ids(ranked)[:k]]) / ideal


def split_seen_unseen(train: QrelSet, test: QrelSet) -> tuple[set[str], set[str]]:
    """A test query is seen iff one of its annotated documents is annotated in train."""
    train_docs = train.annotated_docs()
    seen = {q for q in test.judgments if set(test.judgments[q]) & train_docs}
    return seen, set(test.judgments) - seen


def collision_subset(test: QrelSet, trie: IdentifierTrie) -> set[str]:
    """Queries with at least one relevant document in a bucket of size >= 2."""
    out = set()
    for q in test.judgments:
        if any(d in trie and trie.bucket_size(d) >= 2 for d in test.relevant(q)):
            out.add(q)
    return out


METRICS = {"recall": recall_at_k, "mrr": mrr_at_k, "ndcg": ndcg_at_k}


@dataclass
class MetricReport:
    # (metric, cutoff, subset) -> macro-average
    values: dict[tuple[str, int, str], float] = field(default_factory=dict)
    counts: dict[str, int] = field(default_factory=dict)
    per_query: dict[tuple[str, int], dict[str, float]] = field(default_factory=dict)
    skipped: list[str] = field(default_factory=list)

    def get(self, metric: str, cutoff: int, subset: str = "all") -> float:
        return self.values[(metric, cutoff, subset)]

    def to_csv(self) -> str:
        lines = ["metric,cutoff,subset,value,query_count"]
        for (metric, cutoff, subset), v in sorted(self.values.items()):
            lines.append(f"{metric},{cutoff},{subset},{v:.6f},{self.counts.get(subset, 0)}")
        return "\n".join(lines) + "\n"

    def table(self) -> str:
        subsets = sorted({s for _, _, s in self.values}, key=lambda s: (s != "all", s))
        cols = sorted({(m, c) for m, c, _ in self.values})
        head = f"{'subset':<10} {'#q':>5} " + " ".join(f"{m}@{c}".rjust(10) for m, c in cols)
        rows = [head]
        for s in subsets:
            vals = " ".join(
                (f"{self.values[(m, c, s)]:.4f}" if (m, c, s) in self.values else "-").rjust(10) for m, c in cols
            )
            rows.append(f"{s:<10} {self.counts.get(s, 0):>5} {vals}")
        if self.skipped:
            rows.append(f"({len(self.skipped)} queries without positive judgments skipped)")
        return "\n".join(rows)


def evaluate_run(
    runs: Mapping[str, object],
    qrels: QrelSet,
    cutoffs: Iterable[int] = (1, 10, 100),
    metrics: Iterable[str] = ("recall", "mrr", "ndcg"),
    subsets: Mapping[str, set[str]] | None = None,
) -> MetricReport:
    """Macro-averaged metrics over every judged query (missing runs count as empty)."""
    cutoffs = sorted(set(cutoffs))
    metrics = list(metrics)
    report = MetricReport()
    evaluated = []
    for q in qrels.query_ids():
        if not qrels.relevant(q):
            report.skipped.append(q)
            continue
        evaluated.append(q)
        ranked = runs.get(q, [])
        for metric in metrics:
            for c in cutoffs:
                arg = qrels.grades(q) if metric == "ndcg" else qrels.relevant(q)
                report.per_query.setdefault((metric, c), {})[q] = METRICS[metric](ranked, arg, c)
    groups = {"all": set(evaluated)}
    for name, ids in (subsets or {}).items():
        groups[name] = set(ids) & set(evaluated)
    for name, ids in groups.items():
        report.counts[name] = len(ids)
        if not ids:
            continue
        for metric in metrics:
            for c in cutoffs:
                vals = report.per_query[(metric, c)]
                report.values[(metric, c, name)] = math.fsum(vals[q] for q in sorted(ids)) / len(ids)
    return report


def write_report(path: str | Path, report: MetricReport) -> None:
    atomic_write_text(path, report.to_csv())
