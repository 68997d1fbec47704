"""Declarative run configurations and deterministic stage-chain execution."""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

try:  # tomllib landed in the 3.11 stdlib
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from . import fusion, judgment, lexical, llm, metrics
from .corpus import read_qrels, read_tort_corpus
from .embedding import (
    EmbeddingClient,
    EmbeddingServiceConfig,
    EmbeddingStore,
    cosine,
    dot,
    read_vectors,
)
from .errors import DataFormatError, ValidationError
from .fileio import atomic_write_text
from .llm import ExampleRecord, LlmClient, LlmClientConfig
from .metrics import MetricSpec

SCHEMA_VERSION = 1

CONFIG_DIR = Path(__file__).parent / "configs"

logger = logging.getLogger("lexcourt.pipeline")


@dataclass(frozen=True)
class RunConfig:
    """A validated linear chain of stages plus its inputs and output location."""

    schema_version: int
    run_tag: str
    seed: int
    inputs: dict[str, str]
    output_dir: str
    stages: tuple[dict[str, Any], ...]
    eval_metrics: tuple[str, ...] = ()
    digest: str = ""


@dataclass
class RunResult:
    """What a run produced; cache statistics stay out of the on-disk metadata."""

    run_tag: str
    output_dir: str
    outputs: dict[str, str] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)
    metrics: dict[str, float] = field(default_factory=dict)
    cache_stats: dict[str, int] = field(default_factory=dict)
    dry_run: bool = False


# ---------------------------------------------------------------------------
# Configuration loading and validation
# ---------------------------------------------------------------------------

# consumes: pipeline state a stage can start from; produces: state it leaves.
# "none" is the empty initial state; "selections"/"answers"/"predictions" are
# terminal, so nothing may follow them.
_STAGE_RULES: dict[str, dict[str, Any]] = {
    "summarize": {
        "consumes": {"none"},
        "produces": "none",
        "required": {"endpoint", "model"},
        "optional": {"name", "apply_to", "char_limit", "max_tokens", "timeout"},
        "inputs": {"queries", "corpus"},
    },
    "bm25": {
        "consumes": {"none"},
        "produces": "table",
        "required": set(),
        "optional": {"name", "k", "k1", "b"},
        "inputs": {"queries", "corpus"},
    },
    "dense": {
        "consumes": {"none", "table"},
        "produces": "table",
        "required": set(),
        "optional": {
            "name", "k", "sim", "endpoint", "model", "batch_size",
            "query_vectors", "candidate_vectors", "char_limit",
        },
        "inputs": set(),
    },
    "load_scores": {
        "consumes": {"none", "table"},
        "produces": "table",
        "required": {"file"},
        "optional": {"name"},
        "inputs": set(),
    },
    "normalize": {
        "consumes": {"table"},
        "produces": "table",
        "required": set(),
        "optional": {"mode", "tables"},
        "inputs": set(),
    },
    "combine": {
        "consumes": {"table"},
        "produces": "table",
        "required": {"weights"},
        "optional": {"name"},
        "inputs": set(),
    },
    "tune_weights": {
        "consumes": {"table"},
        "produces": "table",
        "required": set(),
        "optional": {"tables", "step", "objective", "beta", "select"},
        "inputs": {"qrels"},
    },
    "similarity_combine": {
        "consumes": {"table"},
        "produces": "table",
        "required": {"dev_vectors", "dev_metrics", "query_vectors"},
        "optional": {"name", "k"},
        "inputs": set(),
    },
    "topk": {
        "consumes": {"table"},
        "produces": "selections",
        "required": {"k"},
        "optional": set(),
        "inputs": set(),
    },
    "threshold": {
        "consumes": {"table"},
        "produces": "selections",
        "required": {"theta"},
        "optional": {"fallback_top1"},
        "inputs": set(),
    },
    "vote": {
        "consumes": {"table"},
        "produces": "selections",
        "required": {"tables", "m"},
        "optional": {"quorum", "max_out"},
        "inputs": set(),
    },
    "entail": {
        "consumes": {"table"},
        "produces": "selections",
        "required": {"endpoint", "models"},
        "optional": {"max_paragraphs", "system", "template", "max_tokens", "timeout"},
        "inputs": set(),
    },
    "answer": {
        "consumes": {"none"},
        "produces": "answers",
        "required": {"endpoint", "models"},
        "optional": {
            "few_shot", "instruction", "system", "embed_endpoint", "embed_model",
            "max_tokens", "timeout",
        },
        "inputs": {"questions"},
    },
    "judge_heuristics": {
        "consumes": {"none"},
        "produces": "predictions",
        "required": set(),
        "optional": {"x"},
        "inputs": {"cases", "predictions"},
    },
    "judge_cluster": {
        "consumes": {"none"},
        "produces": "predictions",
        "required": {"embed_endpoint", "embed_model", "chat_endpoint", "chat_model"},
        "optional": {"theta", "system", "template", "max_tokens", "timeout"},
        "inputs": {"cases"},
    },
}

_STANDALONE = {"answer", "judge_heuristics", "judge_cluster"}


def validate_config(data: Mapping[str, Any]) -> None:
    """Check a raw config mapping; raises ValidationError listing every problem."""
    errors: list[str] = []

    version = data.get("schema_version")
    if version != SCHEMA_VERSION:
        errors.append(f"schema_version must be {SCHEMA_VERSION}, got {version!r}")
    run_tag = data.get("run_tag")
    if not isinstance(run_tag, str) or not run_tag:
        errors.append("run_tag must be a non-empty string")
    if not isinstance(data.get("seed", 0), int):
        errors.append("seed must be an integer")

    inputs = data.get("inputs", {})
    if not isinstance(inputs, Mapping) or not all(
        isinstance(k, str) and isinstance(v, str) for k, v in inputs.items()
    ):
        errors.append("inputs must be a table of name -> path strings")
        inputs = {}

    output = data.get("output", {})
    if not isinstance(output, Mapping) or not isinstance(output.get("dir"), str):
        errors.append("output.dir must be a path string")

    stages = data.get("stage", [])
    if not isinstance(stages, Sequence) or not stages:
        errors.append("at least one [[stage]] is required")
        stages = []

    state = "none"
    for i, stage in enumerate(stages):
        label = f"stage {i + 1}"
        if not isinstance(stage, Mapping):
            errors.append(f"{label}: must be a table")
            continue
        kind = stage.get("kind")
        if kind not in _STAGE_RULES:
            errors.append(f"{label}: unknown kind {kind!r}")
            continue
        rules = _STAGE_RULES[kind]
        if state in ("selections", "answers", "predictions"):
            errors.append(f"{label}: no stage may follow a {state}-producing stage")
        elif state not in rules["consumes"]:
            errors.append(f"{label}: {kind} cannot run on {state} state")
        if kind in _STANDALONE and i != 0:
            errors.append(f"{label}: {kind} must be the first stage")

        keys = set(stage) - {"kind"}
        unknown = keys - rules["required"] - rules["optional"]
        if unknown:
            errors.append(f"{label}: unknown parameters {sorted(unknown)}")
        missing = rules["required"] - keys
        if missing:
            errors.append(f"{label}: missing required parameters {sorted(missing)}")
        for name in rules["inputs"]:
            if name not in inputs:
                errors.append(f"{label}: {kind} needs inputs.{name}")
        if kind == "answer" and stage.get("few_shot", 0) and "examples" not in inputs:
            errors.append(f"{label}: few_shot > 0 needs inputs.examples")

        errors.extend(f"{label}: {msg}" for msg in _check_stage_params(kind, stage))
        state = rules["produces"]

    if stages and state == "none":
        errors.append("the chain produces no output (add a ranking or selection stage)")

    ev = data.get("eval", {})
    if ev and not isinstance(ev, Mapping):
        errors.append("eval must be a table")
    elif isinstance(ev, Mapping):
        names = ev.get("metrics", [])
        if not isinstance(names, list) or not all(isinstance(n, str) for n in names):
            errors.append("eval.metrics must be a list of metric names")

    known_top = {"schema_version", "run_tag", "seed", "inputs", "output", "stage", "eval"}
    unknown_top = set(data) - known_top
    if unknown_top:
        errors.append(f"unknown top-level keys {sorted(unknown_top)}")

    if errors:
        raise ValidationError("invalid run config:\n  " + "\n  ".join(errors))


def _check_stage_params(kind: str, stage: Mapping[str, Any]) -> list[str]:
    errors: list[str] = []

    def expect(name: str, types: tuple[type, ...], ok=lambda v: True, what: str = "") -> None:
        if name in stage:
            value = stage[name]
            if not isinstance(value, types) or isinstance(value, bool) and bool not in types:
                errors.append(f"{name} must be {what or types[0].__name__}")
            elif not ok(value):
                errors.append(f"{name} is out of range: {value!r}")

    expect("k", (int,), lambda v: v >= 1, "an integer >= 1")
    expect("m", (int,), lambda v: v >= 1, "an integer >= 1")
    expect("quorum", (int,), lambda v: v >= 1, "an integer >= 1")
    expect("max_out", (int,), lambda v: v >= 1, "an integer >= 1")
    expect("few_shot", (int,), lambda v: v >= 0, "an integer >= 0")
    expect("char_limit", (int,), lambda v: v >= 0, "an integer >= 0")
    expect("max_tokens", (int,), lambda v: v >= 1, "an integer >= 1")
    expect("step", (int, float), lambda v: 0 < v <= 1, "a number in (0, 1]")
    expect("theta", (int, float), what="a number")
    expect("x", (int, float), lambda v: v > 0, "a number > 0")
    expect("k1", (int, float), lambda v: v >= 0, "a number >= 0")
    expect("b", (int, float), lambda v: 0 <= v <= 1, "a number in [0, 1]")
    expect("timeout", (int, float), lambda v: v > 0, "a number > 0")
    expect("fallback_top1", (bool,), what="a boolean")

    if kind == "normalize" and stage.get("mode", "minmax") not in ("minmax", "zscore", "none"):
        errors.append(f"mode must be minmax, zscore, or none, got {stage.get('mode')!r}")
    if kind == "dense" and stage.get("sim", "cosine") not in ("cosine", "dot"):
        errors.append(f"sim must be cosine or dot, got {stage.get('sim')!r}")
    if kind == "dense":
        has_files = "query_vectors" in stage and "candidate_vectors" in stage
        has_service = "endpoint" in stage and "model" in stage
        if not has_files and not has_service:
            errors.append("dense needs endpoint+model or query_vectors+candidate_vectors")
    if kind == "summarize" and stage.get("apply_to", "both") not in ("queries", "corpus", "both"):
        errors.append(f"apply_to must be queries, corpus, or both, got {stage.get('apply_to')!r}")
    if kind == "combine":
        weights = stage.get("weights")
        if weights == "tuned":
            pass
        elif isinstance(weights, Mapping):
            if not weights:
                errors.append("weights must be non-empty")
            elif not all(
                isinstance(v, (int, float)) and not isinstance(v, bool) and v >= 0
                for v in weights.values()
            ):
                errors.append("weights values must be numbers >= 0")
        else:
            errors.append('weights must be a table of scorer -> weight, or "tuned"')
    if kind in ("vote", "tune_weights") and "tables" in stage:
        tables = stage["tables"]
        if not isinstance(tables, list) or not all(isinstance(t, str) for t in tables):
            errors.append("tables must be a list of table names")
        elif kind == "vote" and len(tables) < 2:
            errors.append("vote needs at least two tables")
    if kind == "vote" and "tables" not in stage:
        pass  # caught by required-parameter check
    if kind in ("entail", "answer"):
        models = stage.get("models")
        if not isinstance(models, list) or not all(isinstance(m, str) for m in models) or not models:
            errors.append("models must be a non-empty list of model names")
        elif kind == "entail" and len(models) > 2:
            errors.append("entail takes at most two models")
    if kind == "tune_weights":
        objective = stage.get("objective", "micro_f1")
        if objective not in ("micro_f1", "macro_f2"):
            errors.append(f"objective must be micro_f1 or macro_f2, got {objective!r}")
        select = stage.get("select")
        if select is not None:
            if not isinstance(select, Mapping):
                errors.append("select must be a table")
            elif select.get("kind", "top_k") not in ("top_k", "threshold"):
                errors.append(f"select.kind must be top_k or threshold, got {select.get('kind')!r}")
    return errors


def config_from_dict(data: Mapping[str, Any]) -> RunConfig:
    validate_config(data)
    canonical = json.dumps(data, sort_keys=True, default=str)
    ev = data.get("eval", {})
    return RunConfig(
        schema_version=data["schema_version"],
        run_tag=data["run_tag"],
        seed=data.get("seed", 0),
        inputs=dict(data.get("inputs", {})),
        output_dir=data["output"]["dir"],
        stages=tuple(dict(s) for s in data["stage"]),
        eval_metrics=tuple(ev.get("metrics", [])) if isinstance(ev, Mapping) else (),
        digest=hashlib.sha256(canonical.encode("utf-8")).hexdigest(),
    )


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        data = tomllib.loads(path.read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise ValidationError(f"{path}: not valid TOML: {exc}") from exc
    return config_from_dict(data)


def preset_path(name: str) -> Path:
    path = CONFIG_DIR / f"{name}.toml"
    if not path.exists():
        available = sorted(p.stem for p in CONFIG_DIR.glob("*.toml"))
        raise ValidationError(f"unknown preset {name!r}; available: {available}")
    return path


# ---------------------------------------------------------------------------
# Input readers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PipelineDoc:
    """One retrievable unit: a case, paragraph, or article."""

    id: str
    text: str
    query_id: str | None = None
    index: int | None = None


def read_docs(path: str | Path) -> list[PipelineDoc]:
    """Read JSONL documents with id and text (or a paragraphs list).

    ``query_id`` scopes a document to one query's candidate pool and ``index``
    carries a stable paragraph number. Ids must be unique within their scope.
    """
    path = Path(path)
    docs: list[PipelineDoc] = []
    seen: set[tuple[str | None, str]] = set()
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"{path}:{lineno}: bad JSON") from exc
        if not isinstance(row, dict) or "id" not in row:
            raise DataFormatError(f"{path}:{lineno}: each record needs an id")
        doc_id = str(row["id"])
        if "text" in row:
            text = str(row["text"])
        elif "paragraphs" in row:
            text = "\n\n".join(str(p) for p in row["paragraphs"])
        else:
            raise DataFormatError(f"{path}:{lineno}: record needs text or paragraphs")
        query_id = str(row["query_id"]) if "query_id" in row else None
        index = int(row["index"]) if "index" in row else None
        key = (query_id, doc_id)
        if key in seen:
            raise DataFormatError(f"{path}:{lineno}: duplicate document id {doc_id!r}")
        seen.add(key)
        docs.append(PipelineDoc(id=doc_id, text=text, query_id=query_id, index=index))
    return docs


def read_questions(path: str | Path) -> list[ExampleRecord]:
    """Read yes/no question records: id, question text, article text(s), label."""
    path = Path(path)
    records: list[ExampleRecord] = []
    seen: set[str] = set()
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"{path}:{lineno}: bad JSON") from exc
        if "id" not in row:
            raise DataFormatError(f"{path}:{lineno}: each record needs an id")
        rid = str(row["id"])
        if rid in seen:
            raise DataFormatError(f"{path}:{lineno}: duplicate question id {rid!r}")
        seen.add(rid)
        hypothesis = row.get("question", row.get("hypothesis"))
        if hypothesis is None:
            raise DataFormatError(f"{path}:{lineno}: record needs question text")
        if "articles" in row:
            premise = "\n".join(str(a) for a in row["articles"])
        elif "premise" in row:
            premise = str(row["premise"])
        else:
            raise DataFormatError(f"{path}:{lineno}: record needs articles or premise")
        label = row.get("label")
        if label is not None and label not in ("Y", "N"):
            raise DataFormatError(f"{path}:{lineno}: label must be Y or N, got {label!r}")
        records.append(
            ExampleRecord(
                id=rid,
                premise=premise,
                hypothesis=str(hypothesis),
                label=label,
                article_ids=frozenset(str(a) for a in row.get("article_ids", [])),
            )
        )
    return records


# ---------------------------------------------------------------------------
# Execution
# ---------------------------------------------------------------------------


class _ListHandler(logging.Handler):
    def __init__(self, sink: list[str]):
        super().__init__(level=logging.WARNING)
        self.sink = sink

    def emit(self, record: logging.LogRecord) -> None:
        self.sink.append(record.getMessage())


class _Execution:
    """Mutable state threaded through one run's stage chain."""

    def __init__(self, config: RunConfig, cache_dir: str | None):
        self.config = config
        self.cache_dir = cache_dir
        self.queries: dict[str, str] = {}
        self.docs: list[PipelineDoc] = []
        self.scoped = False
        self.tables: dict[str, fusion.ScoreTable] = {}
        self.last_table: str | None = None
        self.candidates: dict[str, list[str]] = {}
        self.selections: dict[str, list[str]] | None = None
        self.answers: dict[str, str] | None = None
        self.predictions: dict[str, tuple[bool, list[bool], list[bool]]] | None = None
        self.tuned: fusion.WeightVector | None = None
        self.tuned_value: float | None = None
        self.warnings: list[str] = []
        self.cache_stats = {"service_requests": 0, "cache_hits": 0}

    # -- input helpers ------------------------------------------------------

    def input_path(self, name: str) -> Path:
        try:
            return Path(self.config.inputs[name])
        except KeyError:
            raise ValidationError(f"run config has no inputs.{name}") from None

    def load_retrieval_inputs(self) -> None:
        if self.queries:
            return
        self.queries = {d.id: d.text for d in read_docs(self.input_path("queries"))}
        self.docs = read_docs(self.input_path("corpus"))
        self.scoped = any(d.query_id is not None for d in self.docs)

    def pool_for(self, qid: str) -> list[PipelineDoc]:
        if self.scoped:
            return [d for d in self.docs if d.query_id == qid]
        return self.docs

    def doc_text(self, qid: str, cid: str) -> str:
        for d in self.pool_for(qid):
            if d.id == cid:
                return d.text
        raise KeyError(f"document {cid!r} not found for query {qid!r}")

    def chat_client(self, stage: Mapping[str, Any], model: str, endpoint_key: str = "endpoint") -> LlmClient:
        return LlmClient(
            LlmClientConfig(
                endpoint=stage[endpoint_key],
                model=model,
                max_tokens=stage.get("max_tokens", 800),
                timeout=stage.get("timeout", 60.0),
                cache_dir=self.cache_dir,
            )
        )

    def embed_client(self, endpoint: str, model: str, batch_size: int = 32) -> EmbeddingClient:
        return EmbeddingClient(
            EmbeddingServiceConfig(
                endpoint=endpoint,
                model=model,
                batch_size=batch_size,
                cache_dir=self.cache_dir,
            )
        )

    def note_client(self, client: LlmClient | EmbeddingClient) -> None:
        self.cache_stats["service_requests"] += client.requests_made
        self.cache_stats["cache_hits"] += client.cache_hits

    def set_table(self, name: str, table: fusion.ScoreTable, k: int | None = None) -> None:
        self.tables[name] = table
        self.last_table = name
        self.candidates = {}
        for qid, rl in table.ranked_lists().items():
            ids = rl.ids()
            self.candidates[qid] = ids[:k] if k is not None else ids

    # -- stages -------------------------------------------------------------

    def run_stage(self, stage: Mapping[str, Any]) -> None:
        getattr(self, "_stage_" + stage["kind"])(stage)

    def _stage_summarize(self, stage: Mapping[str, Any]) -> None:
        self.load_retrieval_inputs()
        client = self.chat_client(stage, stage["model"])
        limit = stage.get("char_limit", 0)
        apply_to = stage.get("apply_to", "both")
        if apply_to in ("queries", "both"):
            self.queries = {
                qid: llm.summarize_case(text, client, limit)
                for qid, text in sorted(self.queries.items())
            }
        if apply_to in ("corpus", "both"):
            self.docs = [
                PipelineDoc(
                    id=d.id,
                    text=llm.summarize_case(d.text, client, limit),
                    query_id=d.query_id,
                    index=d.index,
                )
                for d in self.docs
            ]
        self.note_client(client)

    def _stage_bm25(self, stage: Mapping[str, Any]) -> None:
        self.load_retrieval_inputs()
        name = stage.get("name", "bm25")
        params = lexical.Bm25Params(k1=stage.get("k1", 1.2), b=stage.get("b", 0.75))
        k = stage.get("k", 100)
        scores: dict[str, dict[str, float]] = {}
        order: dict[str, list[str]] = {}
        if self.scoped:
            for qid in sorted(self.queries):
                index = lexical.build_index([(d.id, d.text) for d in self.pool_for(qid)])
                rl = lexical.bm25_topk(self.queries[qid], index, params, k, qid)
                scores[qid] = dict(rl.entries)
                order[qid] = rl.ids()
        else:
            index = lexical.build_index([(d.id, d.text) for d in self.docs])
            for qid in sorted(self.queries):
                rl = lexical.bm25_topk(self.queries[qid], index, params, k, qid)
                scores[qid] = dict(rl.entries)
                order[qid] = rl.ids()
        self.tables[name] = fusion.ScoreTable(name, scores)
        self.last_table = name
        self.candidates = order

    def _stage_dense(self, stage: Mapping[str, Any]) -> None:
        name = stage.get("name", "dense")
        sim = stage.get("sim", "cosine")
        measure = cosine if sim == "cosine" else dot
        k = stage.get("k")
        limit = stage.get("char_limit", 0)

        if "query_vectors" in stage:
            qstore = read_vectors(stage["query_vectors"])
            cstore = read_vectors(stage["candidate_vectors"])
            qvecs, cvecs = qstore.vectors, cstore.vectors
            qids = sorted(qvecs)
            pools = {
                qid: self.candidates.get(qid, sorted(cvecs)) if self.candidates else sorted(cvecs)
                for qid in qids
            }
        else:
            self.load_retrieval_inputs()
            client = self.embed_client(
                stage["endpoint"], stage["model"], stage.get("batch_size", 32)
            )

            def clip(text: str) -> str:
                return text[:limit] if limit > 0 else text

            qids = sorted(self.queries)
            pools = {}
            texts: dict[tuple[str, str], str] = {}
            for qid in qids:
                if self.candidates:
                    pool = self.candidates.get(qid, [])
                    pools[qid] = pool
                    for cid in pool:
                        texts[(qid if self.scoped else "", cid)] = self.doc_text(qid, cid)
                else:
                    pool_docs = self.pool_for(qid)
                    pools[qid] = [d.id for d in pool_docs]
                    for d in pool_docs:
                        texts[(qid if self.scoped else "", d.id)] = d.text
            ordered_docs = sorted(texts)
            all_texts = [clip(self.queries[qid]) for qid in qids]
            all_texts += [clip(texts[key]) for key in ordered_docs]
            vectors = client.embed(all_texts)
            qvecs = {qid: vectors[i] for i, qid in enumerate(qids)}
            doc_vec = {key: vectors[len(qids) + i] for i, key in enumerate(ordered_docs)}
            cvecs = {}
            self.note_client(client)

        scores: dict[str, dict[str, float]] = {}
        for qid in qids:
            qvec = qvecs[qid]
            row = {}
            for cid in pools[qid]:
                if cvecs:
                    if cid not in cvecs:
                        raise DataFormatError(f"candidate_vectors is missing {cid!r}")
                    cvec = cvecs[cid]
                else:
                    cvec = doc_vec[(qid if self.scoped else "", cid)]
                row[cid] = measure(qvec, cvec)
            scores[qid] = row
        self.set_table(name, fusion.ScoreTable(name, scores), k)

    def _stage_load_scores(self, stage: Mapping[str, Any]) -> None:
        table = fusion.read_score_table(stage["file"], stage.get("name"))
        self.set_table(table.scorer_name, table)

    def _stage_normalize(self, stage: Mapping[str, Any]) -> None:
        mode = stage.get("mode", "minmax")
        names = stage.get("tables") or ([self.last_table] if self.last_table else [])
        for name in names:
            if name not in self.tables:
                raise ValidationError(f"normalize: no table named {name!r}")
            self.tables[name] = fusion.normalize_scores(self.tables[name], mode)

    def _stage_combine(self, stage: Mapping[str, Any]) -> None:
        weights = stage["weights"]
        if weights == "tuned":
            if self.tuned is None:
                raise ValidationError('combine weights="tuned" needs a tune_weights stage first')
            wv = self.tuned
        else:
            total = sum(weights.values())
            if total <= 0:
                raise ValidationError("combine weights must sum to a positive value")
            wv = fusion.WeightVector({k_: v / total for k_, v in weights.items()})
        for scorer in wv.weights:
            if scorer not in self.tables:
                raise ValidationError(f"combine: no table named {scorer!r}")
        name = stage.get("name", "combined")
        combined = fusion.weighted_combine(
            [self.tables[n] for n in wv.weights], wv, name
        )
        self.set_table(name, combined)

    def _stage_tune_weights(self, stage: Mapping[str, Any]) -> None:
        names = stage.get("tables") or list(self.tables)
        for name in names:
            if name not in self.tables:
                raise ValidationError(f"tune_weights: no table named {name!r}")
        qrels = read_qrels(self.input_path("qrels"))
        objective = MetricSpec(stage.get("objective", "micro_f1"), beta=stage.get("beta"))
        select = stage.get("select", {})
        selector = fusion.SelectionRule(
            kind=select.get("kind", "top_k"),
            k=select.get("k", 1),
            theta=select.get("theta", 0.0),
            fallback_top1=select.get("fallback_top1", False),
        )
        self.tuned, self.tuned_value = fusion.grid_search_weights(
            [self.tables[n] for n in names],
            qrels,
            objective,
            step=stage.get("step", 0.1),
            selector=selector,
        )

    def _stage_similarity_combine(self, stage: Mapping[str, Any]) -> None:
        qstore = read_vectors(stage["query_vectors"])
        dev_store = read_vectors(stage["dev_vectors"])
        dev_metrics = json.loads(Path(stage["dev_metrics"]).read_text(encoding="utf-8"))
        if not isinstance(dev_metrics, dict) or not all(
            isinstance(v, dict) for v in dev_metrics.values()
        ):
            raise DataFormatError(f"{stage['dev_metrics']}: expected scorer -> query -> value")
        for scorer in dev_metrics:
            if scorer not in self.tables:
                raise ValidationError(f"similarity_combine: no table named {scorer!r}")
        name = stage.get("name", "similarity_combined")
        k = stage.get("k", 5)
        scores: dict[str, dict[str, float]] = {}
        qids = sorted(set().union(*(t.scores.keys() for t in self.tables.values())))
        for qid in qids:
            if qid not in qstore.vectors:
                raise DataFormatError(f"query_vectors is missing {qid!r}")
            wv = fusion.similarity_informed_weights(
                qstore.vectors[qid], dev_store, dev_metrics, k
            )
            cands: set[str] = set()
            for scorer in wv.weights:
                cands.update(self.tables[scorer].scores.get(qid, {}))
            scores[qid] = {
                cid: sum(
                    w * self.tables[scorer].scores.get(qid, {}).get(cid, 0.0)
                    for scorer, w in wv.weights.items()
                )
                for cid in sorted(cands)
            }
        self.set_table(name, fusion.ScoreTable(name, scores))

    def _require_table(self) -> fusion.ScoreTable:
        if self.last_table is None:
            raise ValidationError("no score table available at this point in the chain")
        return self.tables[self.last_table]

    def _stage_topk(self, stage: Mapping[str, Any]) -> None:
        table = self._require_table()
        k = stage["k"]
        self.selections = {
            qid: rl.ids()[:k] for qid, rl in sorted(table.ranked_lists().items())
        }

    def _stage_threshold(self, stage: Mapping[str, Any]) -> None:
        table = self._require_table()
        theta = stage["theta"]
        fallback = stage.get("fallback_top1", False)
        out: dict[str, list[str]] = {}
        for qid, rl in sorted(table.ranked_lists().items()):
            chosen = fusion.threshold_select(rl, theta, fallback)
            out[qid] = [cid for cid in rl.ids() if cid in chosen]
        self.selections = out

    def _stage_vote(self, stage: Mapping[str, Any]) -> None:
        names = stage["tables"]
        for name in names:
            if name not in self.tables:
                raise ValidationError(f"vote: no table named {name!r}")
        qids = sorted(set().union(*(self.tables[n].scores.keys() for n in names)))
        out: dict[str, list[str]] = {}
        for qid in qids:
            lists = [self.tables[n].ranked(qid) for n in names]
            out[qid] = fusion.majority_vote_topm(
                lists, stage["m"], stage.get("quorum"), stage.get("max_out")
            )
        self.selections = out

    def _stage_entail(self, stage: Mapping[str, Any]) -> None:
        self.load_retrieval_inputs()
        table = self._require_table()
        clients = [self.chat_client(stage, model) for model in stage["models"]]
        template = llm.load_template(stage["template"]) if "template" in stage else None
        system = stage.get("system")
        cap = stage.get("max_paragraphs")
        out: dict[str, list[str]] = {}
        for qid in sorted(table.scores):
            pool = self.candidates.get(qid, [])
            if cap is not None:
                pool = pool[:cap]
            if not pool:
                out[qid] = []
                self.warnings.append(f"entail: query {qid!r} has no candidate paragraphs")
                continue
            index_of: dict[str, int] = {}
            for rank, cid in enumerate(pool, start=1):
                doc = next(d for d in self.pool_for(qid) if d.id == cid)
                index_of[cid] = doc.index if doc.index is not None else rank
            if len(set(index_of.values())) != len(index_of):
                raise DataFormatError(f"query {qid!r}: duplicate paragraph indices in pool")
            paragraphs = [(index_of[cid], self.doc_text(qid, cid)) for cid in pool]
            chosen = llm.entail_select(self.queries[qid], paragraphs, clients, template, system)
            by_index = {idx: cid for cid, idx in index_of.items()}
            out[qid] = [by_index[idx] for idx in sorted(chosen)]
        for client in clients:
            self.note_client(client)
        self.selections = out

    def _stage_answer(self, stage: Mapping[str, Any]) -> None:
        questions = read_questions(self.input_path("questions"))
        few_shot = stage.get("few_shot", 0)
        pool: list[ExampleRecord] = []
        if few_shot > 0:
            pool = read_questions(self.input_path("examples"))
            unlabeled = [ex.id for ex in pool if ex.label is None]
            if unlabeled:
                raise DataFormatError(f"examples need Y/N labels; missing for {unlabeled[:5]}")
            if "embed_endpoint" in stage:
                embedder = self.embed_client(stage["embed_endpoint"], stage.get("embed_model", ""))
                vectors = embedder.embed([ex.hypothesis for ex in pool + questions])
                pool = [
                    ExampleRecord(
                        id=ex.id, premise=ex.premise, hypothesis=ex.hypothesis,
                        label=ex.label, article_ids=ex.article_ids,
                        embedding=vectors[i],
                    )
                    for i, ex in enumerate(pool)
                ]
                questions = [
                    ExampleRecord(
                        id=ex.id, premise=ex.premise, hypothesis=ex.hypothesis,
                        label=ex.label, article_ids=ex.article_ids,
                        embedding=vectors[len(pool) + i],
                    )
                    for i, ex in enumerate(questions)
                ]
                self.note_client(embedder)
        clients = [self.chat_client(stage, model) for model in stage["models"]]
        instruction = stage.get("instruction", llm.DEFAULT_YESNO_INSTRUCTION)
        system = stage.get("system", llm.DEFAULT_SYSTEM_PROMPT)
        answers: dict[str, str] = {}
        for question in sorted(questions, key=lambda q: q.id):
            examples = (
                llm.select_fewshot_examples(question, pool, few_shot) if few_shot > 0 else None
            )
            votes = [
                llm.yesno_answer(
                    question.premise, question.hypothesis, client,
                    instruction=instruction, system=system, examples=examples,
                ).value
                for client in clients
            ]
            answers[question.id] = llm.majority_vote_answers(votes)
        for client in clients:
            self.note_client(client)
        self.answers = answers

    def _stage_judge_heuristics(self, stage: Mapping[str, Any]) -> None:
        cases = read_tort_corpus(self.input_path("cases"))
        base = judgment.read_predictions(self.input_path("predictions"))
        x = stage.get("x", 2.0)
        out: dict[str, tuple[bool, list[bool], list[bool]]] = {}
        for case in cases:
            if case.id not in base:
                raise DataFormatError(f"no base prediction for case {case.id!r}")
            tort, p_labels, d_labels = base[case.id]
            if len(p_labels) != len(case.plaintiff_claims) or len(d_labels) != len(
                case.defendant_claims
            ):
                raise DataFormatError(f"prediction for {case.id!r} has wrong label counts")
            out[case.id] = judgment.apply_judgment_heuristics(tort, p_labels, d_labels, x)
        self.predictions = out

    def _stage_judge_cluster(self, stage: Mapping[str, Any]) -> None:
        cases = read_tort_corpus(self.input_path("cases"))
        theta = stage.get("theta", 0.75)
        embedder = self.embed_client(stage["embed_endpoint"], stage["embed_model"])
        chat = self.chat_client(stage, stage["chat_model"], endpoint_key="chat_endpoint")
        template = llm.load_template(stage["template"]) if "template" in stage else None
        system = stage.get("system")
        out: dict[str, tuple[bool, list[bool], list[bool]]] = {}
        for case in sorted(cases, key=lambda c: c.id):
            claims = case.claims
            if not claims:
                out[case.id] = (False, [], [])
                continue
            vectors = embedder.embed([c.text for c in claims])
            store = EmbeddingStore(
                dim=len(vectors[0]),
                vectors={str(i): v for i, v in enumerate(vectors)},
            )
            out[case.id] = judgment.predict_with_clusters(
                case, store, chat, theta, template, system
            )
        self.note_client(embedder)
        self.note_client(chat)
        self.predictions = out


def _planned_outputs(config: RunConfig) -> list[str]:
    state = "none"
    tuned = False
    for stage in config.stages:
        rules = _STAGE_RULES[stage["kind"]]
        state = rules["produces"]
        tuned = tuned or stage["kind"] == "tune_weights"
    names = ["run_meta.json"]
    if state == "table":
        names += ["scores.tsv", "run.trec"]
    elif state == "selections":
        names += ["scores.tsv", "run.trec", "selection.tsv"]
    elif state == "answers":
        names += ["answers.tsv"]
    elif state == "predictions":
        names += ["predictions.jsonl"]
    if tuned:
        names.append("weights.json")
    if config.eval_metrics:
        names += ["metrics.json", "metrics.txt"]
    return names


def execute_run(
    config: RunConfig,
    cache_dir: str | None = None,
    dry_run: bool = False,
    seed: int | None = None,
) -> RunResult:
    """Run the stage chain and write its artifacts atomically.

    Outputs are a pure function of the config and inputs: rerunning a config
    against the same services reproduces every artifact byte for byte.
    """
    out_dir = Path(config.output_dir)
    result = RunResult(run_tag=config.run_tag, output_dir=str(out_dir), dry_run=dry_run)
    if dry_run:
        result.outputs = {name: str(out_dir / name) for name in _planned_outputs(config)}
        return result

    execution = _Execution(config, cache_dir)
    handler = _ListHandler(execution.warnings)
    root = logging.getLogger("lexcourt")
    root.addHandler(handler)
    try:
        for stage in config.stages:
            execution.run_stage(stage)
    finally:
        root.removeHandler(handler)

    out_dir.mkdir(parents=True, exist_ok=True)

    def emit(name: str, text: str) -> None:
        atomic_write_text(out_dir / name, text)
        result.outputs[name] = str(out_dir / name)

    if execution.last_table is not None:
        table = execution.tables[execution.last_table]
        fusion.write_score_table(table, out_dir / "scores.tsv")
        result.outputs["scores.tsv"] = str(out_dir / "scores.tsv")
        fusion.write_trec_run(
            table.ranked_lists().values(), out_dir / "run.trec", config.run_tag
        )
        result.outputs["run.trec"] = str(out_dir / "run.trec")

    if execution.selections is not None:
        lines = [
            f"{qid}\t{cid}"
            for qid in sorted(execution.selections)
            for cid in execution.selections[qid]
        ]
        emit("selection.tsv", "\n".join(lines) + ("\n" if lines else ""))

    if execution.answers is not None:
        lines = [f"{qid}\t{execution.answers[qid]}" for qid in sorted(execution.answers)]
        emit("answers.tsv", "\n".join(lines) + ("\n" if lines else ""))

    if execution.predictions is not None:
        judgment.write_predictions(execution.predictions, out_dir / "predictions.jsonl")
        result.outputs["predictions.jsonl"] = str(out_dir / "predictions.jsonl")

    if execution.tuned is not None:
        emit(
            "weights.json",
            json.dumps(
                {
                    "weights": execution.tuned.weights,
                    "objective_value": execution.tuned_value,
                },
                sort_keys=True,
            )
            + "\n",
        )

    if config.eval_metrics:
        result.metrics = _evaluate(config, execution)
        emit("metrics.json", metrics.report_json(result.metrics) + "\n")
        emit("metrics.txt", metrics.format_report(result.metrics, title=config.run_tag))

    meta = {
        "schema_version": config.schema_version,
        "run_tag": config.run_tag,
        "config_digest": config.digest,
        "seed": seed if seed is not None else config.seed,
        "outputs": sorted(result.outputs) + ["run_meta.json"],
        "warnings": execution.warnings,
    }
    emit("run_meta.json", json.dumps(meta, indent=2, sort_keys=True) + "\n")

    result.warnings = execution.warnings
    result.cache_stats = execution.cache_stats
    return result


def _evaluate(config: RunConfig, execution: _Execution) -> dict[str, float]:
    """Compute the configured metrics over whatever the chain produced."""
    out: dict[str, float] = {}
    for name in config.eval_metrics:
        if name in ("micro_f1", "micro_precision", "micro_recall", "macro_f2"):
            qrels = read_qrels(execution.input_path("qrels"))
            if execution.selections is None:
                raise ValidationError(f"eval.{name} needs a selection-producing chain")
            sets = {qid: set(cids) for qid, cids in execution.selections.items()}
            if name == "macro_f2":
                out[name] = metrics.evaluate_retrieved_sets(
                    MetricSpec("macro_f2"), sets, qrels
                )
            else:
                p, r, f1 = metrics.micro_prf(metrics.counts_from_sets(sets, qrels))
                out["micro_precision"], out["micro_recall"], out["micro_f1"] = p, r, f1
        elif name.startswith("recall_at_"):
            qrels = read_qrels(execution.input_path("qrels"))
            if execution.last_table is None:
                raise ValidationError(f"eval.{name} needs a score table")
            k = int(name[len("recall_at_"):])
            lists = execution.tables[execution.last_table].ranked_lists()
            out[name] = metrics.evaluate_ranked_lists(
                MetricSpec("recall_at_k", k=k), lists, qrels
            )
        elif name == "accuracy":
            if execution.answers is not None:
                gold = {
                    q.id: q.label
                    for q in read_questions(execution.input_path("questions"))
                    if q.label is not None
                }
                correct = sum(
                    1 for qid, ans in execution.answers.items() if gold.get(qid) == ans
                )
                out[name] = metrics.accuracy(correct, len(gold))
            elif execution.predictions is not None:
                cases = read_tort_corpus(execution.input_path("cases"))
                gold_tort = {c.id: c.tort_label for c in cases if c.tort_label is not None}
                correct = sum(
                    1
                    for cid, (tort, _, _) in execution.predictions.items()
                    if gold_tort.get(cid) == tort
                )
                out[name] = metrics.accuracy(correct, len(gold_tort))
            else:
                raise ValidationError("eval.accuracy needs answers or predictions")
        elif name == "label_micro_f1":
            if execution.predictions is None:
                raise ValidationError("eval.label_micro_f1 needs a prediction-producing chain")
            cases = {c.id: c for c in read_tort_corpus(execution.input_path("cases"))}
            pred: list[bool] = []
            gold: list[bool] = []
            for cid, (_, p_labels, d_labels) in sorted(execution.predictions.items()):
                case = cases.get(cid)
                if case is None:
                    continue
                for label, claim in zip(p_labels + d_labels, case.claims):
                    if claim.accepted is not None:
                        pred.append(label)
                        gold.append(claim.accepted)
            out[name] = metrics.micro_f1_labels(pred, gold)
        else:
            raise ValidationError(f"unknown eval metric {name!r}")
    return out
