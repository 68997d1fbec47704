"""Score normalization, fusion, voting, and threshold selection over ranked runs."""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Literal, Sequence

from .corpus import Qrels
from .errors import DataFormatError
from .fileio import atomic_write_text

if TYPE_CHECKING:  # pragma: no cover
    from .embedding import EmbeddingStore
    from .metrics import MetricSpec


@dataclass(frozen=True)
class RankedList:
    """Candidates for one query, ordered by non-increasing score.

    Ties in score are permitted but candidate ids must be unique; producers
    break score ties by ascending id so equal inputs give equal lists.
    """

    query_id: str
    entries: tuple[tuple[str, float], ...]

    def __post_init__(self) -> None:
        seen: set[str] = set()
        prev = math.inf
        for cid, score in self.entries:
            if not math.isfinite(score):
                raise ValueError(f"non-finite score for candidate {cid!r}")
            if score > prev:
                raise ValueError(f"scores must be non-increasing (violated at {cid!r})")
            if cid in seen:
                raise ValueError(f"duplicate candidate id: {cid!r}")
            seen.add(cid)
            prev = score

    def top(self, m: int) -> tuple[tuple[str, float], ...]:
        return self.entries[:m]

    def ids(self) -> list[str]:
        return [cid for cid, _ in self.entries]


@dataclass(frozen=True)
class ScoreTable:
    """Per-query candidate scores produced by one named scorer."""

    scorer_name: str
    scores: dict[str, dict[str, float]]

    def __post_init__(self) -> None:
        if not self.scorer_name:
            raise ValueError("scorer_name must be non-empty")
        for qid, row in self.scores.items():
            for cid, s in row.items():
                if not math.isfinite(s):
                    raise ValueError(f"non-finite score for ({qid!r}, {cid!r})")

    def ranked(self, query_id: str) -> RankedList:
        row = self.scores.get(query_id, {})
        entries = sorted(row.items(), key=lambda e: (-e[1], e[0]))
        return RankedList(query_id=query_id, entries=tuple(entries))

    def ranked_lists(self) -> dict[str, RankedList]:
        return {qid: self.ranked(qid) for qid in self.scores}


@dataclass(frozen=True)
class WeightVector:
    """Non-negative scorer weights summing to one."""

    weights: dict[str, float]

    def __post_init__(self) -> None:
        if not self.weights:
            raise ValueError("weights must be non-empty")
        for name, w in self.weights.items():
            if not math.isfinite(w) or w < 0:
                raise ValueError(f"weight for {name!r} must be finite and >= 0, got {w}")
        total = sum(self.weights.values())
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"weights must sum to 1, got {total}")


NormalizationMode = Literal["minmax", "zscore", "none"]


def normalize_scores(table: ScoreTable, mode: NormalizationMode = "minmax") -> ScoreTable:
    """Normalize each query's candidate scores independently.

    ``minmax`` maps onto [0, 1] with constant rows collapsing to 0.5;
    ``zscore`` centers and scales by the population deviation with constant
    rows collapsing to 0.0; ``none`` returns an equal table.
    """
    if mode == "none":
        return ScoreTable(table.scorer_name, {q: dict(row) for q, row in table.scores.items()})
    out: dict[str, dict[str, float]] = {}
    for qid, row in table.scores.items():
        if not row:
            out[qid] = {}
            continue
        values = list(row.values())
        if mode == "minmax":
            lo, hi = min(values), max(values)
            if hi == lo:
                out[qid] = {cid: 0.5 for cid in row}
            else:
                out[qid] = {cid: (s - lo) / (hi - lo) for cid, s in row.items()}
        elif mode == "zscore":
            mean = sum(values) / len(values)
            var = sum((v - mean) ** 2 for v in values) / len(values)
            std = math.sqrt(var)
            if std == 0.0:
                out[qid] = {cid: 0.0 for cid in row}
            else:
                out[qid] = {cid: (s - mean) / std for cid, s in row.items()}
        else:
            raise ValueError(f"unknown normalization mode: {mode!r}")
    return ScoreTable(table.scorer_name, out)


def weighted_combine(
    tables: Sequence[ScoreTable],
    w: WeightVector,
    name: str = "combined",
) -> ScoreTable:
    """Linearly combine score tables; a candidate missing from a table scores 0.

    Every weighted scorer must be present among ``tables``; queries are the
    union of the weighted tables' queries and candidates the per-query union.
    """
    by_name = {t.scorer_name: t for t in tables}
    if len(by_name) != len(tables):
        raise ValueError("tables must have distinct scorer names")
    for scorer in w.weights:
        if scorer not in by_name:
            raise ValueError(f"weight names scorer with no table: {scorer!r}")

    weighted = [(by_name[s], wt) for s, wt in w.weights.items()]
    queries: set[str] = set()
    for table, _ in weighted:
        queries.update(table.scores)
    out: dict[str, dict[str, float]] = {}
    for qid in sorted(queries):
        cands: set[str] = set()
        for table, _ in weighted:
            cands.update(table.scores.get(qid, {}))
        out[qid] = {
            cid: sum(wt * table.scores.get(qid, {}).get(cid, 0.0) for table, wt in weighted)
            for cid in sorted(cands)
        }
    return ScoreTable(name, out)


@dataclass(frozen=True)
class SelectionRule:
    """Turns ranked scores into per-query answer sets."""

    kind: Literal["top_k", "threshold"] = "top_k"
    k: int = 1
    theta: float = 0.0
    fallback_top1: bool = False

    def __post_init__(self) -> None:
        if self.kind == "top_k" and self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")

    def apply(self, ranked: RankedList) -> set[str]:
        if self.kind == "top_k":
            return {cid for cid, _ in ranked.top(self.k)}
        return threshold_select(ranked, self.theta, self.fallback_top1)

    def apply_table(self, table: ScoreTable) -> dict[str, set[str]]:
        return {qid: self.apply(rl) for qid, rl in table.ranked_lists().items()}


def threshold_select(ranked: RankedList, theta: float, fallback_top1: bool = False) -> set[str]:
    """Select candidates scoring strictly above theta.

    With ``fallback_top1`` an empty selection falls back to the single
    top-ranked candidate (still empty for an empty list).
    """
    selected = {cid for cid, s in ranked.entries if s > theta}
    if not selected and fallback_top1 and ranked.entries:
        selected = {ranked.entries[0][0]}
    return selected


def majority_vote_topm(
    lists: Sequence[RankedList],
    m: int,
    quorum: int | None = None,
    max_out: int | None = None,
) -> list[str]:
    """Vote over the top-m prefixes of several rankings for one query.

    A candidate is kept when it appears in at least ``quorum`` prefixes
    (default: majority, ceil(L/2)). Output orders by descending vote count,
    then ascending mean rank over the lists containing the candidate, then
    ascending id; ``max_out`` truncates.
    """
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    if len(lists) < 2:
        raise ValueError("voting needs at least two ranked lists")
    if quorum is None:
        quorum = math.ceil(len(lists) / 2)
    if not 1 <= quorum <= len(lists):
        raise ValueError(f"quorum must be in [1, {len(lists)}], got {quorum}")

    votes: dict[str, int] = {}
    ranks: dict[str, list[int]] = {}
    for rl in lists:
        for pos, (cid, _) in enumerate(rl.top(m), start=1):
            votes[cid] = votes.get(cid, 0) + 1
            ranks.setdefault(cid, []).append(pos)

    kept = [cid for cid, v in votes.items() if v >= quorum]
    kept.sort(key=lambda c: (-votes[c], sum(ranks[c]) / len(ranks[c]), c))
    return kept[:max_out] if max_out is not None else kept


def _weight_lattice(n_scorers: int, m: int) -> Iterable[tuple[int, ...]]:
    """All compositions of m into n_scorers parts, first components largest first."""

    def rec(prefix: tuple[int, ...], remaining: int, slots: int) -> Iterable[tuple[int, ...]]:
        if slots == 1:
            yield prefix + (remaining,)
            return
        for c in range(remaining, -1, -1):
            yield from rec(prefix + (c,), remaining - c, slots - 1)

    yield from rec((), m, n_scorers)


def grid_search_weights(
    tables: Sequence[ScoreTable],
    qrels: Qrels,
    objective: "MetricSpec",
    step: float = 0.1,
    selector: SelectionRule = SelectionRule(kind="top_k", k=1),
) -> tuple[WeightVector, float]:
    """Exhaustively search the step lattice of weight vectors for 2 to 5 scorers.

    Enumeration walks the lattice with weight concentrated on earlier scorers
    first, i.e. descending lexicographic order of the leading components, and
    keeps the first strict maximizer; on a tie the earlier point wins, so with
    two equally good scorers the result puts all weight on the first.
    """
    from .metrics import MetricSpec, evaluate_retrieved_sets  # noqa: F401  (cycle guard)

    if not 2 <= len(tables) <= 5:
        raise ValueError(f"grid search supports 2 to 5 scorers, got {len(tables)}")
    if not qrels.entries:
        raise ValueError("qrels must be non-empty")
    if step <= 0:
        raise ValueError(f"step must be > 0, got {step}")
    m = round(1.0 / step)
    if m < 1 or abs(m * step - 1.0) > 1e-9:
        raise ValueError(f"step must divide 1 exactly, got {step}")

    names = [t.scorer_name for t in tables]
    best: tuple[WeightVector, float] | None = None
    for point in _weight_lattice(len(tables), m):
        w = WeightVector({name: c / m for name, c in zip(names, point)})
        combined = weighted_combine(tables, w)
        selected = selector.apply_table(combined)
        value = evaluate_retrieved_sets(objective, selected, qrels)
        if best is None or value > best[1]:
            best = (w, value)
    assert best is not None
    return best


def tune_threshold(
    lists: Iterable[RankedList],
    qrels: Qrels,
    objective: "MetricSpec",
    grid: Sequence[float],
    fallback_top1: bool = False,
) -> tuple[float, float]:
    """Pick the threshold maximizing the objective over a finite grid.

    The grid is scanned in ascending order and the first maximizer is kept.
    """
    from .metrics import evaluate_retrieved_sets

    if not qrels.entries:
        raise ValueError("qrels must be non-empty")
    if not grid:
        raise ValueError("grid must be non-empty")
    ranked = list(lists)
    best: tuple[float, float] | None = None
    for theta in sorted(grid):
        selected = {rl.query_id: threshold_select(rl, theta, fallback_top1) for rl in ranked}
        value = evaluate_retrieved_sets(objective, selected, qrels)
        if best is None or value > best[1]:
            best = (theta, value)
    assert best is not None
    return best


def similarity_informed_weights(
    query_vector: Sequence[float],
    dev_vectors: "EmbeddingStore",
    dev_metric_by_scorer: dict[str, dict[str, float]],
    k: int = 5,
) -> WeightVector:
    """Weight scorers by their dev-set quality on the k dev queries most
    similar to the given query vector.

    Each scorer's raw weight is the mean of its per-query dev metric over the
    similarity neighborhood (missing values count 0); weights normalize to sum
    1, falling back to uniform when every mean is 0. Renaming scorers permutes
    the output correspondingly.
    """
    from .embedding import EmbeddingStore, topk_similar  # noqa: F401  (cycle guard)

    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if not dev_metric_by_scorer:
        raise ValueError("need at least one scorer's dev metrics")
    neighborhood = topk_similar(tuple(query_vector), dev_vectors, k).ids()
    if not neighborhood:
        raise ValueError("dev_vectors must be non-empty")

    raw: dict[str, float] = {}
    for scorer, per_query in dev_metric_by_scorer.items():
        raw[scorer] = sum(per_query.get(qid, 0.0) for qid in neighborhood) / len(neighborhood)
    total = sum(raw.values())
    if total <= 0.0:
        uniform = 1.0 / len(raw)
        return WeightVector({scorer: uniform for scorer in raw})
    return WeightVector({scorer: v / total for scorer, v in raw.items()})


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------


def write_score_table(table: ScoreTable, path: str | Path) -> None:
    lines = [f"# scorer: {table.scorer_name}"]
    for qid in sorted(table.scores):
        row = table.scores[qid]
        for cid in sorted(row):
            lines.append(f"{qid}\t{cid}\t{row[cid]!r}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_score_table(path: str | Path, scorer_name: str | None = None) -> ScoreTable:
    """Read a tab-separated ``query_id candidate_id score`` file.

    A leading ``# scorer: <name>`` comment names the scorer; an explicit
    argument overrides it and the file stem is the last resort.
    """
    path = Path(path)
    name = scorer_name
    scores: dict[str, dict[str, float]] = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line.lstrip("#").strip()
            if body.startswith("scorer:") and name is None:
                name = body[len("scorer:"):].strip()
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise DataFormatError(f"{path}:{lineno}: expected 3 tab-separated fields, got {len(parts)}")
        qid, cid, score_text = parts
        try:
            score = float(score_text)
        except ValueError as exc:
            raise DataFormatError(f"{path}:{lineno}: bad score {score_text!r}") from exc
        row = scores.setdefault(qid, {})
        if cid in row:
            raise DataFormatError(f"{path}:{lineno}: duplicate candidate {cid!r} for query {qid!r}")
        row[cid] = score
    return ScoreTable(name or path.stem, scores)


def write_trec_run(lists: Iterable[RankedList], path: str | Path, run_tag: str) -> None:
    """Write rankings in the six-column run format:
    ``query_id Q0 candidate_id rank score run_tag``.
    """
    lines = []
    for rl in sorted(lists, key=lambda r: r.query_id):
        for rank, (cid, score) in enumerate(rl.entries, start=1):
            lines.append(f"{rl.query_id} Q0 {cid} {rank} {score:.6f} {run_tag}")
    atomic_write_text(path, "\n".join(lines) + ("\n" if lines else ""))


def read_trec_run(path: str | Path) -> dict[str, RankedList]:
    path = Path(path)
    rows: dict[str, list[tuple[int, str, float]]] = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 6:
            raise DataFormatError(f"{path}:{lineno}: expected 6 fields, got {len(parts)}")
        qid, _, cid, rank_text, score_text, _ = parts
        try:
            rank, score = int(rank_text), float(score_text)
        except ValueError as exc:
            raise DataFormatError(f"{path}:{lineno}: bad rank/score") from exc
        rows.setdefault(qid, []).append((rank, cid, score))
    out: dict[str, RankedList] = {}
    for qid, entries in rows.items():
        entries.sort()
        out[qid] = RankedList(qid, tuple((cid, score) for _, cid, score in entries))
    return out
