"""Ingestion, cleaning, and statistics for case-law and tort corpora."""
from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path

from .errors import DataFormatError
from .fileio import atomic_write_text

# Default placeholder tokens found in redacted Federal Court case files.
DEFAULT_PLACEHOLDER_TOKENS = (
    "FRAGMENT_SUPPRESSED",
    "REFERENCE_SUPPRESSED",
    "CITATION_SUPPRESSED",
    "DATE_SUPPRESSED",
)

# Anchored patterns for procedural header lines (parties, counsel, venue).
DEFAULT_METADATA_PATTERNS = (
    r"^\s*Counsel\s*:",
    r"^\s*Solicitors?(\s+of\s+record)?\s*:",
    r"^\s*Between\s*:",
    r"^\s*Docket\s*:",
    r"^\s*Citation\s*:",
    r"^\s*Registry\s*:",
    r"^\s*Heard\s+at\s+",
    r"^\s*Judgment\s+delivered\s+at\s+",
    r"^\s*PRESENT\s*:",
)

# 100-word English stopword list backing the language heuristic.
ENGLISH_STOPWORDS = frozenset(
    """
    a about after all also an and any are as at be because been before being
    between both but by can could did do does down during each few for from
    had has have he her him his how i if in into is it its may me more most
    my no nor not of off on only or other our out over own same she should so
    some such than that the their them then there these they this those
    through to under until up was we were what when where which while who
    will with would you your
    """.split()
)

_WORD_RE = re.compile(r"[a-z0-9]+")
_PARA_MARKER_RE = re.compile(r"^\s*\[(\d+)\]\s*")


@dataclass(frozen=True)
class RawDocument:
    """One file from the case pool, before any cleaning."""

    id: str
    text: str
    source_path: str = ""

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("document id must be non-empty")


@dataclass(frozen=True)
class CaseDocument:
    """A cleaned case: ordered paragraphs plus an optional generated summary.

    ``paragraphs`` holds (index, text) pairs with indices strictly increasing
    from 1. ``placeholder_positions`` records every stripped placeholder as
    (paragraph index, token); each index refers to a surviving paragraph.
    """

    id: str
    paragraphs: tuple[tuple[int, str], ...]
    summary: str | None = None
    placeholder_positions: tuple[tuple[int, str], ...] = ()
    degenerate: bool = False

    def __post_init__(self) -> None:
        indices = [i for i, _ in self.paragraphs]
        if indices and (indices[0] < 1 or any(b <= a for a, b in zip(indices, indices[1:]))):
            raise ValueError(f"paragraph indices must strictly increase from 1: {indices}")
        known = set(indices)
        for idx, token in self.placeholder_positions:
            if idx not in known:
                raise ValueError(f"placeholder position {idx} ({token}) has no paragraph")

    @property
    def text(self) -> str:
        return "\n\n".join(t for _, t in self.paragraphs)


@dataclass(frozen=True)
class Claim:
    """One party claim; ``accepted`` is present only on labeled records."""

    text: str
    accepted: bool | None = None


@dataclass(frozen=True)
class TortCase:
    """Undisputed facts plus per-side claims, optionally labeled with the court's tort decision."""

    id: str
    undisputed_facts: tuple[str, ...] = ()
    plaintiff_claims: tuple[Claim, ...] = ()
    defendant_claims: tuple[Claim, ...] = ()
    tort_label: bool | None = None

    @property
    def claims(self) -> tuple[Claim, ...]:
        """All claims in global index order: plaintiff first, then defendant."""
        return self.plaintiff_claims + self.defendant_claims

    def side_of(self, claim_index: int) -> str:
        if 0 <= claim_index < len(self.plaintiff_claims):
            return "plaintiff"
        if claim_index < len(self.claims):
            return "defendant"
        raise IndexError(f"claim index {claim_index} out of range for case {self.id}")


@dataclass(frozen=True)
class Qrels:
    """Gold relevance judgments: query id -> non-empty set of relevant doc ids."""

    entries: dict[str, frozenset[str]]

    def __post_init__(self) -> None:
        for qid, docs in self.entries.items():
            if not docs:
                raise ValueError(f"qrels entry for {qid!r} is empty")

    def relevant(self, query_id: str) -> frozenset[str]:
        return self.entries.get(query_id, frozenset())


@dataclass(frozen=True)
class PreprocessConfig:
    """Cleaning rules for :func:`preprocess_case`.

    ``keep_placeholder_paragraphs`` controls whether a paragraph that
    contained a placeholder is kept (with the token stripped, the default)
    or removed from the retrieval input entirely.
    """

    metadata_patterns: tuple[str, ...] = DEFAULT_METADATA_PATTERNS
    placeholder_tokens: tuple[str, ...] = DEFAULT_PLACEHOLDER_TOKENS
    keep_placeholder_paragraphs: bool = True


@dataclass(frozen=True)
class LanguageHeuristicConfig:
    stopwords: frozenset[str] = ENGLISH_STOPWORDS
    ratio_threshold: float = 0.15


def normalize_whitespace(text: str) -> str:
    """Collapse all whitespace runs to single spaces and trim the ends."""
    return " ".join(text.split())


def dedupe_collection(docs: list[RawDocument]) -> list[RawDocument]:
    """Drop documents whose whitespace-normalized text already occurred.

    First occurrence wins; input order is otherwise preserved.
    """
    seen: set[str] = set()
    kept = []
    for doc in docs:
        key = normalize_whitespace(doc.text)
        if key in seen:
            continue
        seen.add(key)
        kept.append(doc)
    return kept


def preprocess_case(
    text: str,
    rules: PreprocessConfig = PreprocessConfig(),
    doc_id: str = "",
) -> CaseDocument:
    """Clean one raw case into paragraphs.

    Lines matching a metadata pattern are removed. Paragraph boundaries are
    blank lines or leading bracketed-number markers (``[2] ...``), with the
    marker stripped. Placeholder tokens are stripped from the text and
    recorded as (paragraph index, token). Paragraph indices are assigned
    sequentially from 1 in input order.

    A document whose cleaned text is empty comes back flagged ``degenerate``
    rather than being dropped.
    """
    meta = [re.compile(p) for p in rules.metadata_patterns]
    lines = [ln for ln in text.splitlines() if not any(m.search(ln) for m in meta)]

    # Segment into raw paragraphs.
    chunks: list[list[str]] = []
    current: list[str] = []
    for line in lines:
        if not line.strip():
            if current:
                chunks.append(current)
                current = []
            continue
        if _PARA_MARKER_RE.match(line) and current:
            chunks.append(current)
            current = []
        current.append(_PARA_MARKER_RE.sub("", line, count=1))
    if current:
        chunks.append(current)

    token_re = (
        re.compile("|".join(re.escape(t) for t in rules.placeholder_tokens))
        if rules.placeholder_tokens
        else None
    )
    paragraphs: list[tuple[int, str]] = []
    positions: list[tuple[int, str]] = []
    next_index = 1
    for chunk in chunks:
        raw = normalize_whitespace(" ".join(chunk))
        found = token_re.findall(raw) if token_re else []
        cleaned = normalize_whitespace(token_re.sub(" ", raw)) if found else raw
        if found and not rules.keep_placeholder_paragraphs:
            continue
        if not cleaned and not found:
            continue
        paragraphs.append((next_index, cleaned))
        for tok in found:
            positions.append((next_index, tok))
        next_index += 1

    degenerate = not any(text_ for _, text_ in paragraphs)
    return CaseDocument(
        id=doc_id,
        paragraphs=tuple(paragraphs),
        placeholder_positions=tuple(positions),
        degenerate=degenerate,
    )


def detect_non_english(text: str, cfg: LanguageHeuristicConfig = LanguageHeuristicConfig()) -> bool:
    """True when the stopword ratio falls below the configured threshold.

    Empty or token-free text counts as non-English.
    """
    tokens = _WORD_RE.findall(text.lower())
    if not tokens:
        return True
    hits = sum(1 for t in tokens if t in cfg.stopwords)
    return hits / len(tokens) < cfg.ratio_threshold


def filter_tort_cases(cases: list[TortCase]) -> list[TortCase]:
    """Remove cases where at least two of {facts, plaintiff claims, defendant claims} are empty."""
    kept = []
    for case in cases:
        missing = sum(
            1
            for group in (case.undisputed_facts, case.plaintiff_claims, case.defendant_claims)
            if not group
        )
        if missing < 2:
            kept.append(case)
    return kept


@dataclass(frozen=True)
class StatsReport:
    """Corpus-level counts and averages for a tort collection."""

    samples: int = 0
    avg_facts: float = 0.0
    max_facts: int = 0
    avg_plaintiff_claims: float = 0.0
    max_plaintiff_claims: int = 0
    avg_defendant_claims: float = 0.0
    max_defendant_claims: int = 0
    samples_without_facts: int = 0
    samples_without_plaintiff_claims: int = 0
    samples_without_defendant_claims: int = 0
    samples_without_both_claims: int = 0
    samples_without_facts_and_both_claims: int = 0
    samples_with_facts_and_both_claims: int = 0

    def merged(self, other: StatsReport) -> StatsReport:
        """Combine two per-collection reports: counts sum, maxima max, averages weight by size."""
        n = self.samples + other.samples

        def wavg(a: float, b: float) -> float:
            return (a * self.samples + b * other.samples) / n if n else 0.0

        return StatsReport(
            samples=n,
            avg_facts=wavg(self.avg_facts, other.avg_facts),
            max_facts=max(self.max_facts, other.max_facts),
            avg_plaintiff_claims=wavg(self.avg_plaintiff_claims, other.avg_plaintiff_claims),
            max_plaintiff_claims=max(self.max_plaintiff_claims, other.max_plaintiff_claims),
            avg_defendant_claims=wavg(self.avg_defendant_claims, other.avg_defendant_claims),
            max_defendant_claims=max(self.max_defendant_claims, other.max_defendant_claims),
            samples_without_facts=self.samples_without_facts + other.samples_without_facts,
            samples_without_plaintiff_claims=(
                self.samples_without_plaintiff_claims + other.samples_without_plaintiff_claims
            ),
            samples_without_defendant_claims=(
                self.samples_without_defendant_claims + other.samples_without_defendant_claims
            ),
            samples_without_both_claims=(
                self.samples_without_both_claims + other.samples_without_both_claims
            ),
            samples_without_facts_and_both_claims=(
                self.samples_without_facts_and_both_claims
                + other.samples_without_facts_and_both_claims
            ),
            samples_with_facts_and_both_claims=(
                self.samples_with_facts_and_both_claims
                + other.samples_with_facts_and_both_claims
            ),
        )


def corpus_stats(cases: list[TortCase]) -> StatsReport:
    """Count and average the attribute groups of a tort collection."""
    n = len(cases)
    if n == 0:
        return StatsReport()
    facts = [len(c.undisputed_facts) for c in cases]
    pclaims = [len(c.plaintiff_claims) for c in cases]
    dclaims = [len(c.defendant_claims) for c in cases]
    return StatsReport(
        samples=n,
        avg_facts=sum(facts) / n,
        max_facts=max(facts),
        avg_plaintiff_claims=sum(pclaims) / n,
        max_plaintiff_claims=max(pclaims),
        avg_defendant_claims=sum(dclaims) / n,
        max_defendant_claims=max(dclaims),
        samples_without_facts=sum(1 for f in facts if f == 0),
        samples_without_plaintiff_claims=sum(1 for p in pclaims if p == 0),
        samples_without_defendant_claims=sum(1 for d in dclaims if d == 0),
        samples_without_both_claims=sum(
            1 for p, d in zip(pclaims, dclaims) if p == 0 and d == 0
        ),
        samples_without_facts_and_both_claims=sum(
            1 for f, p, d in zip(facts, pclaims, dclaims) if f == 0 and p == 0 and d == 0
        ),
        samples_with_facts_and_both_claims=sum(
            1 for f, p, d in zip(facts, pclaims, dclaims) if f > 0 and p > 0 and d > 0
        ),
    )


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------


def read_case_corpus(path: str | Path) -> list[RawDocument]:
    """Load a case corpus from a JSON Lines file or a directory of text files.

    JSONL records carry ``id`` and either ``text`` or ``paragraphs`` (an
    array of strings). Directory mode reads every ``*.txt`` file, sorted by
    name, with the stem as the id.
    """
    path = Path(path)
    if path.is_dir():
        docs = []
        for f in sorted(path.glob("*.txt")):
            docs.append(RawDocument(id=f.stem, text=f.read_text(encoding="utf-8"), source_path=str(f)))
        return docs

    docs = []
    seen: set[str] = set()
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as e:
            raise DataFormatError(f"{path}:{lineno}: invalid JSON: {e}") from e
        if "id" not in rec:
            raise DataFormatError(f"{path}:{lineno}: record has no 'id'")
        if "text" in rec:
            text = rec["text"]
        elif "paragraphs" in rec:
            text = "\n\n".join(rec["paragraphs"])
        else:
            raise DataFormatError(f"{path}:{lineno}: record needs 'text' or 'paragraphs'")
        if rec["id"] in seen:
            raise DataFormatError(f"{path}:{lineno}: duplicate id {rec['id']!r}")
        seen.add(rec["id"])
        docs.append(RawDocument(id=str(rec["id"]), text=text, source_path=f"{path}:{lineno}"))
    return docs


def _claims_from_json(items: list, where: str) -> tuple[Claim, ...]:
    claims = []
    for item in items:
        if isinstance(item, str):
            claims.append(Claim(text=item))
        elif isinstance(item, dict) and "text" in item:
            claims.append(Claim(text=item["text"], accepted=item.get("accepted")))
        else:
            raise DataFormatError(f"{where}: claim must be a string or an object with 'text'")
    return tuple(claims)


def read_tort_corpus(path: str | Path) -> list[TortCase]:
    """Load tort cases from JSON Lines.

    Fields: ``id``, ``facts`` (array of strings), ``plaintiff_claims`` and
    ``defendant_claims`` (arrays of ``{text, accepted?}``), optional ``tort``.
    """
    path = Path(path)
    cases = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        where = f"{path}:{lineno}"
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as e:
            raise DataFormatError(f"{where}: invalid JSON: {e}") from e
        if "id" not in rec:
            raise DataFormatError(f"{where}: record has no 'id'")
        cases.append(
            TortCase(
                id=str(rec["id"]),
                undisputed_facts=tuple(rec.get("facts", ())),
                plaintiff_claims=_claims_from_json(rec.get("plaintiff_claims", []), where),
                defendant_claims=_claims_from_json(rec.get("defendant_claims", []), where),
                tort_label=rec.get("tort"),
            )
        )
    return cases


def read_qrels(path: str | Path) -> Qrels:
    """Read tab-separated qrels: ``query_id<TAB>0<TAB>doc_id<TAB>relevance``."""
    path = Path(path)
    entries: dict[str, set[str]] = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise DataFormatError(f"{path}:{lineno}: expected 4 tab-separated fields, got {len(parts)}")
        qid, _, docid, rel = parts
        try:
            relevant = int(rel) > 0
        except ValueError as e:
            raise DataFormatError(f"{path}:{lineno}: relevance must be an integer") from e
        if relevant:
            entries.setdefault(qid, set()).add(docid)
    return Qrels(entries={q: frozenset(d) for q, d in entries.items()})


def write_qrels(qrels: Qrels, path: str | Path) -> None:
    lines = []
    for qid in sorted(qrels.entries):
        for docid in sorted(qrels.entries[qid]):
            lines.append(f"{qid}\t0\t{docid}\t1")
    atomic_write_text(path, "\n".join(lines) + "\n")
