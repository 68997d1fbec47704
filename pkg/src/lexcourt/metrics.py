"""Retrieval and classification metrics with zero-safe denominators."""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import TYPE_CHECKING, Literal, Mapping, Sequence

from .corpus import Qrels

if TYPE_CHECKING:  # pragma: no cover
    from .fusion import RankedList


@dataclass(frozen=True)
class RetrievalCounts:
    """Aggregated retrieval tallies: sizes of retrieved, relevant, and overlap."""

    retrieved: int
    relevant: int
    hits: int

    def __post_init__(self) -> None:
        if min(self.retrieved, self.relevant, self.hits) < 0:
            raise ValueError("counts must be non-negative")
        if self.hits > min(self.retrieved, self.relevant):
            raise ValueError("hits cannot exceed retrieved or relevant")


@dataclass(frozen=True)
class MetricSpec:
    """Names an evaluation objective; ``k`` and ``beta`` apply where relevant."""

    kind: Literal["micro_f1", "macro_f2", "recall_at_k", "accuracy", "micro_f1_labels"]
    k: int | None = None
    beta: float | None = None

    def __post_init__(self) -> None:
        if self.kind == "recall_at_k" and (self.k is None or self.k < 1):
            raise ValueError("recall_at_k needs k >= 1")
        if self.beta is not None and self.beta <= 0:
            raise ValueError(f"beta must be > 0, got {self.beta}")


def f_from_pr(p: float, r: float, beta: float = 1.0) -> float:
    """F-measure (1 + b^2) * p * r / (b^2 * p + r); 0 when both inputs are 0."""
    if beta <= 0:
        raise ValueError(f"beta must be > 0, got {beta}")
    if not 0.0 <= p <= 1.0 or not 0.0 <= r <= 1.0:
        raise ValueError("precision and recall must lie in [0, 1]")
    denom = beta * beta * p + r
    if denom == 0.0:
        return 0.0
    return (1.0 + beta * beta) * p * r / denom


def micro_prf(counts: RetrievalCounts) -> tuple[float, float, float]:
    """Micro-averaged precision, recall, and F1 from pooled counts."""
    p = counts.hits / counts.retrieved if counts.retrieved else 0.0
    r = counts.hits / counts.relevant if counts.relevant else 0.0
    return p, r, f_from_pr(p, r, 1.0)


def counts_from_sets(
    retrieved_by_query: Mapping[str, set[str]],
    qrels: Qrels,
) -> RetrievalCounts:
    """Pool per-query set selections over the qrels queries.

    Queries absent from ``retrieved_by_query`` contribute an empty selection;
    selections for queries outside the qrels are ignored.
    """
    retrieved = relevant = hits = 0
    for qid, rel in qrels.entries.items():
        got = retrieved_by_query.get(qid, set())
        retrieved += len(got)
        relevant += len(rel)
        hits += len(got & rel)
    return RetrievalCounts(retrieved=retrieved, relevant=relevant, hits=hits)


def macro_f2(per_query: Sequence[tuple[set[str], set[str]]]) -> float:
    """Mean per-query F2 over (retrieved, relevant) set pairs."""
    if not per_query:
        raise ValueError("macro_f2 needs at least one query")
    total = 0.0
    for got, rel in per_query:
        inter = len(got & rel)
        p = inter / len(got) if got else 0.0
        r = inter / len(rel) if rel else 0.0
        total += f_from_pr(p, r, 2.0)
    return total / len(per_query)


def recall_at_k(ranked: "RankedList", relevant: set[str], k: int) -> float:
    """Fraction of relevant candidates among the top k; 0 when none are relevant."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if not relevant:
        return 0.0
    top = {cid for cid, _ in ranked.top(k)}
    return len(top & relevant) / len(relevant)


def accuracy(correct: int, total: int) -> float:
    if correct < 0 or total < 0 or correct > total:
        raise ValueError(f"need 0 <= correct <= total, got {correct}/{total}")
    return correct / total if total else 0.0


def micro_f1_labels(pred: Sequence[bool], gold: Sequence[bool]) -> float:
    """Micro-F1 over aligned boolean label sequences, true as the positive class."""
    if len(pred) != len(gold):
        raise ValueError(f"length mismatch: {len(pred)} vs {len(gold)}")
    tp = sum(1 for p, g in zip(pred, gold) if p and g)
    fp = sum(1 for p, g in zip(pred, gold) if p and not g)
    fn = sum(1 for p, g in zip(pred, gold) if not p and g)
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    return f_from_pr(p, r, 1.0)


def evaluate_retrieved_sets(
    spec: MetricSpec,
    retrieved_by_query: Mapping[str, set[str]],
    qrels: Qrels,
) -> float:
    """Score per-query set selections under a set-valued objective."""
    if spec.kind == "micro_f1":
        _, _, f1 = micro_prf(counts_from_sets(retrieved_by_query, qrels))
        return f1
    if spec.kind == "macro_f2":
        pairs = [
            (retrieved_by_query.get(qid, set()), set(rel))
            for qid, rel in qrels.entries.items()
        ]
        return macro_f2(pairs)
    raise ValueError(f"objective {spec.kind!r} does not apply to set selections")


def evaluate_ranked_lists(
    spec: MetricSpec,
    lists: Mapping[str, "RankedList"],
    qrels: Qrels,
) -> float:
    """Score ranked runs under a rank-valued objective (mean over qrels queries)."""
    from .fusion import RankedList

    if spec.kind != "recall_at_k":
        raise ValueError(f"objective {spec.kind!r} does not apply to ranked lists")
    assert spec.k is not None
    if not qrels.entries:
        raise ValueError("qrels must be non-empty")
    total = 0.0
    for qid, rel in qrels.entries.items():
        rl = lists.get(qid, RankedList(qid, ()))
        total += recall_at_k(rl, set(rel), spec.k)
    return total / len(qrels.entries)


# ---------------------------------------------------------------------------
# Reports: four decimal places, round-half-even
# ---------------------------------------------------------------------------


def format_report(values: Mapping[str, float | int], title: str | None = None) -> str:
    """Render an aligned text report; floats print at four decimals."""
    lines = [title] if title else []
    width = max((len(name) for name in values), default=0)
    for name, value in values.items():
        shown = f"{value:.4f}" if isinstance(value, float) else str(value)
        lines.append(f"{name.ljust(width)}  {shown}")
    return "\n".join(lines) + "\n"


def report_json(values: Mapping[str, float | int]) -> str:
    rounded = {
        name: round(value, 4) if isinstance(value, float) else value
        for name, value in values.items()
    }
    return json.dumps(rounded, sort_keys=True)
