"""Prompt templating, the chat-completions client, and answer extraction."""
from __future__ import annotations

import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from .embedding import cosine
from .errors import ServiceError
from .httpio import DiskCache, post_json, sha256_hex

logger = logging.getLogger("lexcourt.llm")

_PLACEHOLDER_RE = re.compile(r"\{([A-Za-z_][A-Za-z0-9_]*)\}")

TEMPLATE_DIR = Path(__file__).parent / "templates"

DEFAULT_SYSTEM_PROMPT = "You are an overthinking legal assistant who always gives the best advice."

DEFAULT_YESNO_INSTRUCTION = (
    "Determine whether the question is entailed by the legal articles. Reason through "
    "the relevant conditions step by step, then finish with a final line reading "
    "\"CONCLUSION: TRUE\" or \"CONCLUSION: FALSE\"."
)

DEFAULT_POSITIVE_TOKENS: tuple[str, ...] = ("TRUE", "YES", "Y")
DEFAULT_NEGATIVE_TOKENS: tuple[str, ...] = ("FALSE", "NO", "N")


@dataclass(frozen=True)
class PromptTemplate:
    """A named prompt body with ``{identifier}`` placeholders."""

    name: str
    body: str

    def placeholders(self) -> frozenset[str]:
        return frozenset(_PLACEHOLDER_RE.findall(self.body))


def load_template(name_or_path: str | Path) -> PromptTemplate:
    """Load a bundled template by bare name, or any template by file path."""
    path = Path(name_or_path)
    if path.suffix != ".txt" and not path.exists():
        path = TEMPLATE_DIR / f"{name_or_path}.txt"
    return PromptTemplate(name=path.stem, body=path.read_text(encoding="utf-8"))


def render_template(template: PromptTemplate, bindings: Mapping[str, str]) -> str:
    """Substitute every placeholder in a single pass.

    Bound values are never rescanned, so braces inside them stay literal.
    Unbound placeholders are an error; extra bindings are ignored.
    """
    missing = sorted(template.placeholders() - set(bindings))
    if missing:
        raise ValueError(f"template {template.name!r} has unbound placeholders: {missing}")
    return _PLACEHOLDER_RE.sub(lambda m: str(bindings[m.group(1)]), template.body)


# ---------------------------------------------------------------------------
# Chat-completions client
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LlmClientConfig:
    endpoint: str
    model: str
    temperature: float = 0.0
    max_tokens: int = 800
    concurrency: int = 1
    max_retries: int = 3
    timeout: float = 60.0
    retry_backoff: float = 0.5
    cache_dir: str | None = None

    def __post_init__(self) -> None:
        if self.max_tokens < 1:
            raise ValueError(f"max_tokens must be >= 1, got {self.max_tokens}")
        if self.concurrency < 1:
            raise ValueError(f"concurrency must be >= 1, got {self.concurrency}")


class LlmClient:
    """Cached chat completion calls against one endpoint and model.

    Responses are cached under a digest of the endpoint and the full request
    body, so identical requests replay without touching the service.
    """

    def __init__(self, config: LlmClientConfig):
        self.config = config
        self.cache = DiskCache(config.cache_dir)
        self.requests_made = 0
        self.cache_hits = 0

    def complete(self, prompt: str, system: str | None = None) -> str:
        messages = []
        if system:
            messages.append({"role": "system", "content": system})
        messages.append({"role": "user", "content": prompt})
        body = {
            "model": self.config.model,
            "messages": messages,
            "temperature": self.config.temperature,
            "max_tokens": self.config.max_tokens,
        }
        key = sha256_hex(f"chat\0{self.config.endpoint}\0" + json.dumps(body, sort_keys=True))
        cached = self.cache.get(key)
        if cached is not None:
            self.cache_hits += 1
            return cached["content"]
        response = post_json(
            self.config.endpoint,
            body,
            timeout=self.config.timeout,
            max_retries=self.config.max_retries,
            backoff=self.config.retry_backoff,
        )
        self.requests_made += 1
        try:
            content = response["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ServiceError("chat response missing choices[0].message.content") from exc
        if not isinstance(content, str):
            raise ServiceError("chat response content is not text")
        self.cache.put(key, {"content": content})
        return content

    def complete_many(self, items: Sequence[tuple[str, str | None]]) -> list[str]:
        """Complete several (prompt, system) pairs, preserving order."""
        if self.config.concurrency == 1 or len(items) <= 1:
            return [self.complete(prompt, system) for prompt, system in items]
        with ThreadPoolExecutor(max_workers=self.config.concurrency) as pool:
            return list(pool.map(lambda it: self.complete(it[0], it[1]), items))


# ---------------------------------------------------------------------------
# Case summarization
# ---------------------------------------------------------------------------


def summarize_case(case_text: str, client: LlmClient, char_limit: int = 0) -> str:
    """Produce the structured summary for one case; empty input is an error."""
    if not case_text.strip():
        raise ValueError("cannot summarize an empty case")
    if char_limit > 0:
        case_text = case_text[:char_limit]
    template = load_template("summarize_case")
    return client.complete(render_template(template, {"INPUT_CASE": case_text}))


# ---------------------------------------------------------------------------
# Paragraph selection
# ---------------------------------------------------------------------------


# Separators may stack ("1, 2, and 3"), so the joiner is one-or-more atoms.
_ID_JOIN = r"(?:\s|,|and|or|&)+"
_KEYWORD_IDS_RE = re.compile(
    rf"paragraphs?[\s:#]*((?:\[?\d+\]?)(?:{_ID_JOIN}\[?\d+\]?)*)",
    re.IGNORECASE,
)
_BARE_LIST_RE = re.compile(rf"\[?\d+\]?(?:{_ID_JOIN}\[?\d+\]?)*\.?", re.IGNORECASE)
_INT_RE = re.compile(r"\d+")


def extract_paragraph_ids(text: str, valid: set[int]) -> set[int]:
    """Pull paragraph numbers out of a free-form response.

    Collects numbers that follow a "paragraph(s)" keyword and lines that are
    nothing but a number list. Numbers outside ``valid`` are dropped with a
    warning rather than propagated.
    """
    found: set[int] = set()
    for match in _KEYWORD_IDS_RE.finditer(text):
        found.update(int(n) for n in _INT_RE.findall(match.group(1)))
    for line in text.splitlines():
        line = line.strip()
        if line and _BARE_LIST_RE.fullmatch(line):
            found.update(int(n) for n in _INT_RE.findall(line))
    invalid = found - valid
    if invalid:
        logger.warning("dropping out-of-range paragraph ids: %s", sorted(invalid))
    return found & valid


def agreement_vote(a: set[int], b: set[int]) -> set[int]:
    """Keep the consensus; on complete disagreement keep both selections."""
    return (a & b) if (a & b) else (a | b)


def format_paragraphs(paragraphs: Sequence[tuple[int, str]]) -> str:
    return "\n\n".join(f"[{idx}] {text}" for idx, text in paragraphs)


def entail_select(
    query_text: str,
    paragraphs: Sequence[tuple[int, str]],
    clients: Sequence[LlmClient],
    template: PromptTemplate | None = None,
    system: str | None = None,
) -> set[int]:
    """Ask one or two models which paragraphs entail the query decision.

    Two models are reconciled by agreement voting. An empty final selection
    falls back to the top-ranked (first listed) paragraph and is flagged in
    the log.
    """
    if not paragraphs:
        raise ValueError("paragraphs must be non-empty")
    if not 1 <= len(clients) <= 2:
        raise ValueError(f"entail_select takes one or two clients, got {len(clients)}")
    valid = {idx for idx, _ in paragraphs}
    prompt = render_template(
        template or load_template("entail_select"),
        {"query": query_text, "paragraphs": format_paragraphs(paragraphs)},
    )
    picks = [extract_paragraph_ids(client.complete(prompt, system), valid) for client in clients]
    result = picks[0] if len(picks) == 1 else agreement_vote(picks[0], picks[1])
    if not result:
        result = {paragraphs[0][0]}
        logger.warning("empty entailment selection; falling back to top-ranked paragraph")
    return result


# ---------------------------------------------------------------------------
# Yes/no answering
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BinaryAnswer:
    """A normalized yes/no verdict plus which extraction rule produced it."""

    value: str  # "Y" or "N"
    rule: str  # "conclusion", "whole_text", or "fallback"
    raw: str

    def __post_init__(self) -> None:
        if self.value not in ("Y", "N"):
            raise ValueError(f"value must be Y or N, got {self.value!r}")


def _token_pattern(tokens: Sequence[str]) -> re.Pattern[str]:
    return re.compile(r"\b(?:" + "|".join(re.escape(t) for t in tokens) + r")\b", re.IGNORECASE)


def _scan_tokens(
    text: str,
    positive: Sequence[str],
    negative: Sequence[str],
) -> bool | None:
    """True/False for the latest matching token; None when neither appears."""
    last_pos = max((m.start() for m in _token_pattern(positive).finditer(text)), default=-1)
    last_neg = max((m.start() for m in _token_pattern(negative).finditer(text)), default=-1)
    if last_pos < 0 and last_neg < 0:
        return None
    return last_pos > last_neg


def extract_binary_answer(
    response: str,
    positive: Sequence[str] = DEFAULT_POSITIVE_TOKENS,
    negative: Sequence[str] = DEFAULT_NEGATIVE_TOKENS,
) -> BinaryAnswer:
    """Scan a model response for a yes/no verdict.

    The text after the last CONCLUSION marker is scanned first; the later of
    the positive/negative whole-token matches wins. Without a marker (or when
    the marked section is inconclusive) the whole text is scanned; with no
    match anywhere the answer defaults to N.
    """
    lowered = response.lower()
    marker = lowered.rfind("conclusion")
    if marker >= 0:
        verdict = _scan_tokens(response[marker:], positive, negative)
        if verdict is not None:
            return BinaryAnswer("Y" if verdict else "N", "conclusion", response)
    verdict = _scan_tokens(response, positive, negative)
    if verdict is not None:
        return BinaryAnswer("Y" if verdict else "N", "whole_text", response)
    return BinaryAnswer("N", "fallback", response)


def majority_vote_answers(answers: Sequence[str]) -> str:
    """Majority of Y/N votes; ties resolve to N."""
    if not answers:
        raise ValueError("answers must be non-empty")
    for a in answers:
        if a not in ("Y", "N"):
            raise ValueError(f"answers must be Y or N, got {a!r}")
    yes = sum(1 for a in answers if a == "Y")
    return "Y" if yes > len(answers) - yes else "N"


# ---------------------------------------------------------------------------
# Few-shot example selection
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExampleRecord:
    """One labeled question with its supporting articles."""

    id: str
    premise: str
    hypothesis: str
    label: str | None = None
    article_ids: frozenset[str] = frozenset()
    embedding: tuple[float, ...] | None = None


def select_fewshot_examples(
    query: ExampleRecord,
    pool: Sequence[ExampleRecord],
    k: int,
) -> list[ExampleRecord]:
    """Pick up to k examples: article-sharing records first, then nearest by
    embedding similarity.

    Sharing records order by descending shared-article count then id; the
    similarity fill orders by descending cosine then id (by id alone when
    embeddings are unavailable). The query itself is never selected.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    candidates = [p for p in pool if p.id != query.id]
    shared = [
        (len(p.article_ids & query.article_ids), p)
        for p in candidates
        if p.article_ids & query.article_ids
    ]
    shared.sort(key=lambda e: (-e[0], e[1].id))
    chosen = [p for _, p in shared[:k]]
    if len(chosen) < k:
        chosen_ids = {p.id for p in chosen}
        rest = [p for p in candidates if p.id not in chosen_ids]
        if query.embedding is not None:
            embedded = [p for p in rest if p.embedding is not None]
            bare = [p for p in rest if p.embedding is None]
            embedded.sort(key=lambda p: (-cosine(query.embedding, p.embedding), p.id))
            bare.sort(key=lambda p: p.id)
            rest = embedded + bare
        else:
            rest.sort(key=lambda p: p.id)
        chosen.extend(rest[: k - len(chosen)])
    return chosen


def format_examples(examples: Sequence[ExampleRecord]) -> str:
    """Render labeled examples for the few-shot prompt block."""
    blocks = []
    for ex in examples:
        if ex.label not in ("Y", "N"):
            raise ValueError(f"example {ex.id!r} needs a Y/N label")
        answer = "TRUE" if ex.label == "Y" else "FALSE"
        blocks.append(
            f"Legal articles:\n{ex.premise}\nQuestion:\n{ex.hypothesis}\nAnswer: {answer}"
        )
    return "\n\n".join(blocks)


def yesno_answer(
    premise: str,
    hypothesis: str,
    client: LlmClient,
    instruction: str = DEFAULT_YESNO_INSTRUCTION,
    system: str | None = DEFAULT_SYSTEM_PROMPT,
    examples: Sequence[ExampleRecord] | None = None,
    positive: Sequence[str] = DEFAULT_POSITIVE_TOKENS,
    negative: Sequence[str] = DEFAULT_NEGATIVE_TOKENS,
) -> BinaryAnswer:
    """One zero- or few-shot yes/no query; few-shot when examples are given."""
    if examples:
        template = load_template("yesno_few_shot")
        bindings = {
            "instruction": instruction,
            "examples": format_examples(examples),
            "premise": premise,
            "hypothesis": hypothesis,
        }
    else:
        template = load_template("yesno_zero_shot")
        bindings = {"instruction": instruction, "premise": premise, "hypothesis": hypothesis}
    response = client.complete(render_template(template, bindings), system)
    return extract_binary_answer(response, positive, negative)
