"""Tort-judgment post-processing: consistency heuristics and claim clustering."""
from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Final, Mapping, Sequence

from .corpus import TortCase
from .embedding import EmbeddingStore, cosine
from .errors import DataFormatError
from .fileio import atomic_write_text
from .llm import LlmClient, PromptTemplate, load_template, render_template

logger = logging.getLogger("lexcourt.judgment")

OUTLIER: Final[int] = -1

PLAINTIFF: Final[str] = "plaintiff"
DEFENDANT: Final[str] = "defendant"


@dataclass(frozen=True)
class PartyTally:
    """Accepted/unaccepted claim counts for one party."""

    accepted: int
    unaccepted: int

    def __post_init__(self) -> None:
        if self.accepted < 0 or self.unaccepted < 0:
            raise ValueError("tallies must be non-negative")

    @classmethod
    def from_labels(cls, labels: Sequence[bool]) -> "PartyTally":
        acc = sum(1 for l in labels if l)
        return cls(accepted=acc, unaccepted=len(labels) - acc)


def tp_reversal(pred: bool, plaintiff: PartyTally, defendant: PartyTally) -> bool:
    """Flip the tort decision toward a strictly dominant party.

    A party dominates when it has strictly more accepted and strictly fewer
    unaccepted claims than the other; without dominance the prediction stands.
    """
    p_dominates = (
        plaintiff.accepted > defendant.accepted and plaintiff.unaccepted < defendant.unaccepted
    )
    d_dominates = (
        defendant.accepted > plaintiff.accepted and defendant.unaccepted < plaintiff.unaccepted
    )
    if p_dominates:
        return True
    if d_dominates:
        return False
    return pred


def re_refine(labels: Sequence[bool], x: float = 2.0) -> list[bool]:
    """Make one party's claim labels uniform when one side outnumbers the
    other by a factor of at least x.

    With a accepted and u unaccepted claims: a >= x*u turns everything
    accepted and u >= x*a everything unaccepted (the accepted rule wins when
    both hold); otherwise labels are unchanged.
    """
    if x <= 0:
        raise ValueError(f"x must be > 0, got {x}")
    a = sum(1 for l in labels if l)
    u = len(labels) - a
    if not labels:
        return []
    if a >= x * u:
        return [True] * len(labels)
    if u >= x * a:
        return [False] * len(labels)
    return list(labels)


def apply_judgment_heuristics(
    tort_pred: bool,
    plaintiff_labels: Sequence[bool],
    defendant_labels: Sequence[bool],
    x: float = 2.0,
) -> tuple[bool, list[bool], list[bool]]:
    """Run the decision reversal first, then per-party label refinement."""
    tort = tp_reversal(
        tort_pred,
        PartyTally.from_labels(plaintiff_labels),
        PartyTally.from_labels(defendant_labels),
    )
    return tort, re_refine(plaintiff_labels, x), re_refine(defendant_labels, x)


# ---------------------------------------------------------------------------
# Claim clustering
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ClusterAssignment:
    """Claim index to cluster id; OUTLIER marks unclustered claims.

    Cluster ids are contiguous from 0. The greedy clusterer only emits
    clusters of two or more claims; the single-cluster fallback deliberately
    waives that minimum.
    """

    assignment: dict[int, int]

    def __post_init__(self) -> None:
        ids = sorted({c for c in self.assignment.values() if c != OUTLIER})
        if ids != list(range(len(ids))):
            raise ValueError(f"cluster ids must be contiguous from 0, got {ids}")
        if any(c < OUTLIER for c in self.assignment.values()):
            raise ValueError("cluster ids must be >= 0 (or OUTLIER)")

    def clusters(self) -> dict[int, list[int]]:
        out: dict[int, list[int]] = {}
        for idx in sorted(self.assignment):
            cid = self.assignment[idx]
            if cid != OUTLIER:
                out.setdefault(cid, []).append(idx)
        return out

    def outliers(self) -> list[int]:
        return sorted(i for i, c in self.assignment.items() if c == OUTLIER)


def greedy_cluster(vectors: EmbeddingStore, theta: float = 0.75) -> ClusterAssignment:
    """Group claim vectors by cosine similarity to running cluster centroids.

    Claims are scanned in ascending index order (store ids must be integer
    claim indices). Each claim joins the first existing cluster whose mean
    vector is at least theta similar, else it opens a new one. Singleton
    clusters become outliers and surviving clusters renumber contiguously in
    creation order.
    """
    try:
        order = sorted(vectors.vectors, key=int)
    except ValueError as exc:
        raise ValueError("store ids must be integer claim indices") from exc

    members: list[list[int]] = []
    sums: list[list[float]] = []
    for vid in order:
        vec = vectors.vectors[vid]
        placed = False
        for ci, total in enumerate(sums):
            centroid = [x / len(members[ci]) for x in total]
            if cosine(vec, centroid) >= theta:
                members[ci].append(int(vid))
                sums[ci] = [a + b for a, b in zip(total, vec)]
                placed = True
                break
        if not placed:
            members.append([int(vid)])
            sums.append(list(vec))

    assignment: dict[int, int] = {}
    next_id = 0
    for group in members:
        if len(group) < 2:
            for idx in group:
                assignment[idx] = OUTLIER
        else:
            for idx in group:
                assignment[idx] = next_id
            next_id += 1
    return ClusterAssignment(assignment)


def single_cluster_fallback(case: TortCase) -> ClusterAssignment:
    """Treat the whole case as one cluster (waiving the two-claim minimum)."""
    return ClusterAssignment({i: 0 for i in range(len(case.claims))})


# ---------------------------------------------------------------------------
# Cluster assessment and voting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SubargumentVerdict:
    """Model-assessed outcome of one cluster of claims."""

    cluster_id: int
    winning_side: str
    claim_acceptance: dict[int, bool]

    def __post_init__(self) -> None:
        if self.winning_side not in (PLAINTIFF, DEFENDANT):
            raise ValueError(f"winning_side must be plaintiff or defendant, got {self.winning_side!r}")


def cluster_vote(verdicts: Sequence[SubargumentVerdict]) -> bool:
    """The tort holds iff plaintiff wins strictly more subarguments."""
    if not verdicts:
        raise ValueError("cluster_vote needs at least one verdict")
    p_wins = sum(1 for v in verdicts if v.winning_side == PLAINTIFF)
    return p_wins > len(verdicts) - p_wins


def inherit_unclustered(
    assignment: ClusterAssignment,
    clustered_labels: Mapping[int, bool],
    side_of: Mapping[int, str],
    final_tort: bool,
) -> dict[int, bool]:
    """Label outlier claims from their own party's clustered majority.

    With no same-party clustered labels, or on a tie, the label follows the
    final tort decision: plaintiff claims get the decision itself, defendant
    claims its negation.
    """
    labels = dict(clustered_labels)
    for idx in assignment.outliers():
        party = side_of[idx]
        peers = [
            lab
            for i, lab in clustered_labels.items()
            if side_of[i] == party and assignment.assignment.get(i) != OUTLIER
        ]
        accepted = sum(1 for lab in peers if lab)
        rejected = len(peers) - accepted
        if accepted > rejected:
            labels[idx] = True
        elif rejected > accepted:
            labels[idx] = False
        else:
            labels[idx] = final_tort if party == PLAINTIFF else not final_tort
    return labels


_SIDE_RE = re.compile(r"plaintiffs?|defendants?", re.IGNORECASE)
_CLAIM_IDS_RE = re.compile(
    r"claims?[\s:#]*((?:\[?\d+\]?)(?:\s*(?:,|and|or|&|\s)\s*\[?\d+\]?)*)",
    re.IGNORECASE,
)
_INT_RE = re.compile(r"\d+")


def parse_cluster_verdict(
    response: str,
    cluster_id: int,
    member_indices: Sequence[int],
    side_of: Mapping[int, str],
) -> SubargumentVerdict:
    """Read a winner and accepted-claim numbers out of a model response.

    The last party mention wins; without any mention the defendant does (no
    subargument is conceded by silence). Accepted numbers are taken from
    "claim(s)"-led number lists restricted to this cluster's members; when
    none parse, claims of the winning side count accepted.
    """
    mentions = _SIDE_RE.findall(response)
    if mentions:
        side = PLAINTIFF if mentions[-1].lower().startswith(PLAINTIFF) else DEFENDANT
    else:
        side = DEFENDANT
        logger.warning("verdict for cluster %d names no side; defaulting to defendant", cluster_id)

    accepted: set[int] = set()
    for match in _CLAIM_IDS_RE.finditer(response):
        accepted.update(int(n) for n in _INT_RE.findall(match.group(1)))
    accepted &= set(member_indices)
    if accepted:
        acceptance = {i: i in accepted for i in member_indices}
    else:
        acceptance = {i: side_of[i] == side for i in member_indices}
    return SubargumentVerdict(cluster_id=cluster_id, winning_side=side, claim_acceptance=acceptance)


def format_cluster_prompt(
    case: TortCase,
    member_indices: Sequence[int],
    template: PromptTemplate | None = None,
) -> str:
    facts = "\n".join(case.undisputed_facts) if case.undisputed_facts else "(none)"
    claims = "\n".join(
        f"[{i}] ({case.side_of(i)}) {case.claims[i].text}" for i in member_indices
    )
    return render_template(
        template or load_template("judgment_cluster"),
        {"facts": facts, "claims": claims},
    )


def assess_clusters(
    case: TortCase,
    assignment: ClusterAssignment,
    client: LlmClient,
    template: PromptTemplate | None = None,
    system: str | None = None,
) -> list[SubargumentVerdict]:
    """Ask the model for a verdict on every cluster, in cluster-id order."""
    verdicts = []
    side_of = {i: case.side_of(i) for i in range(len(case.claims))}
    for cid, member_indices in sorted(assignment.clusters().items()):
        prompt = format_cluster_prompt(case, member_indices, template)
        response = client.complete(prompt, system)
        verdicts.append(parse_cluster_verdict(response, cid, member_indices, side_of))
    return verdicts


def predict_with_clusters(
    case: TortCase,
    vectors: EmbeddingStore,
    client: LlmClient,
    theta: float = 0.75,
    template: PromptTemplate | None = None,
    system: str | None = None,
) -> tuple[bool, list[bool], list[bool]]:
    """Cluster the case's claims, assess each cluster, vote, and fill outliers.

    A case with no claims is decided against the plaintiff with empty label
    sequences. When clustering yields no clusters the whole case is assessed
    as a single cluster.
    """
    n = len(case.claims)
    if n == 0:
        return False, [], []
    assignment = greedy_cluster(vectors, theta)
    if not assignment.clusters():
        assignment = single_cluster_fallback(case)
    verdicts = assess_clusters(case, assignment, client, template, system)
    tort = cluster_vote(verdicts)
    clustered_labels: dict[int, bool] = {}
    for v in verdicts:
        clustered_labels.update(v.claim_acceptance)
    side_of = {i: case.side_of(i) for i in range(n)}
    labels = inherit_unclustered(assignment, clustered_labels, side_of, tort)
    np = len(case.plaintiff_claims)
    return tort, [labels[i] for i in range(np)], [labels[i] for i in range(np, n)]


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------


def write_assignments(assignments: Mapping[str, ClusterAssignment], path: str | Path) -> None:
    """One row per claim. Cases with no claims write no rows, so they are
    not representable in this format and disappear on read-back."""
    lines = []
    for case_id in sorted(assignments):
        a = assignments[case_id].assignment
        for idx in sorted(a):
            label = "OUTLIER" if a[idx] == OUTLIER else str(a[idx])
            lines.append(f"{case_id}\t{idx}\t{label}")
    atomic_write_text(path, "\n".join(lines) + ("\n" if lines else ""))


def read_assignments(path: str | Path) -> dict[str, ClusterAssignment]:
    path = Path(path)
    raw: dict[str, dict[int, int]] = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise DataFormatError(f"{path}:{lineno}: expected 3 tab-separated fields")
        case_id, idx_text, label = parts
        try:
            idx = int(idx_text)
            cid = OUTLIER if label == "OUTLIER" else int(label)
        except ValueError as exc:
            raise DataFormatError(f"{path}:{lineno}: bad claim index or cluster id") from exc
        if idx in raw.setdefault(case_id, {}):
            raise DataFormatError(f"{path}:{lineno}: duplicate claim index {idx} for {case_id!r}")
        raw[case_id][idx] = cid
    return {case_id: ClusterAssignment(a) for case_id, a in raw.items()}


def write_predictions(
    predictions: Mapping[str, tuple[bool, list[bool], list[bool]]],
    path: str | Path,
) -> None:
    """One JSON object per line: id, tort, and both label sequences."""
    lines = []
    for case_id in sorted(predictions):
        tort, p_labels, d_labels = predictions[case_id]
        lines.append(
            json.dumps(
                {
                    "id": case_id,
                    "tort": tort,
                    "plaintiff_labels": list(p_labels),
                    "defendant_labels": list(d_labels),
                },
                sort_keys=True,
            )
        )
    atomic_write_text(path, "\n".join(lines) + ("\n" if lines else ""))


def read_predictions(path: str | Path) -> dict[str, tuple[bool, list[bool], list[bool]]]:
    path = Path(path)
    out: dict[str, tuple[bool, list[bool], list[bool]]] = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"{path}:{lineno}: bad JSON") from exc
        try:
            case_id = row["id"]
            value = (
                bool(row["tort"]),
                [bool(x) for x in row["plaintiff_labels"]],
                [bool(x) for x in row["defendant_labels"]],
            )
        except (KeyError, TypeError) as exc:
            raise DataFormatError(f"{path}:{lineno}: missing prediction fields") from exc
        if case_id in out:
            raise DataFormatError(f"{path}:{lineno}: duplicate case id {case_id!r}")
        out[case_id] = value
    return out
