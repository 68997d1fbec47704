"""Command-line entry points for corpus prep, retrieval, fusion, and runs."""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path
from typing import Any

try:
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from . import corpus, embedding, fusion, lexical, metrics, pipeline
from .errors import DataFormatError, ServiceError, ValidationError
from .fileio import atomic_write_text


def _add_global_options(parser: argparse.ArgumentParser, top_level: bool) -> None:
    # on subparsers the defaults are suppressed so they cannot clobber values
    # already parsed from before the subcommand
    d = None if top_level else argparse.SUPPRESS
    parser.add_argument("--config", default=d, help="run config TOML (for the run command)")
    parser.add_argument(
        "--cache-dir", default=d, help="disk cache for embedding and chat calls"
    )
    parser.add_argument("--seed", type=int, default=d, help="override the config seed")
    parser.add_argument(
        "--dry-run",
        action="store_true",
        default=False if top_level else argparse.SUPPRESS,
        help="validate and list planned outputs only",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lexcourt",
        description="Multi-stage retrieval, entailment, and judgment pipelines.",
    )
    _add_global_options(parser, top_level=True)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="execute a run config or bundled preset")
    _add_global_options(p, top_level=False)
    p.add_argument("--preset", help="bundled config name, e.g. task2-run1")
    p.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="PATH=VALUE",
        help="override a config key, e.g. stage.0.k=35 or output.dir=runs/x",
    )

    p = sub.add_parser("ingest", help="clean a raw case pool into JSONL documents")
    p.add_argument("--input", required=True, help="JSONL file or directory of .txt files")
    p.add_argument("--output", required=True)
    p.add_argument("--dedupe", action="store_true", help="drop exact duplicates")
    p.add_argument(
        "--drop-non-english", action="store_true", help="drop docs failing the stopword test"
    )
    p.add_argument(
        "--drop-placeholder-paragraphs",
        action="store_true",
        help="remove paragraphs that contained a suppression placeholder",
    )
    p.add_argument(
        "--per-paragraph",
        action="store_true",
        help="write one record per paragraph instead of one per case",
    )

    p = sub.add_parser("stats", help="summarize a tort corpus")
    p.add_argument("--cases", required=True)
    p.add_argument("--filter", action="store_true", help="apply the sparse-case filter first")
    p.add_argument("--json", action="store_true")

    p = sub.add_parser("index", help="build a lexical index over JSONL documents")
    p.add_argument("--corpus", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--no-lowercase", action="store_true")
    p.add_argument("--stopwords", choices=["none", "english"], default="none")

    p = sub.add_parser("score", help="rank queries against a lexical index")
    p.add_argument("--index", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--output", required=True, help="score table TSV")
    p.add_argument("--k", type=int, default=100)
    p.add_argument("--k1", type=float, default=1.2)
    p.add_argument("--b", type=float, default=0.75)
    p.add_argument("--name", default="bm25", help="scorer name for the table")
    p.add_argument("--trec", help="also write a TREC-format run file")
    p.add_argument("--run-tag", default="bm25")

    p = sub.add_parser("embed", help="embed JSONL documents to a vector file")
    _add_global_options(p, top_level=False)
    p.add_argument("--input", required=True)
    p.add_argument("--endpoint", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--batch-size", type=int, default=32)

    p = sub.add_parser("fuse", help="normalize and combine score tables")
    p.add_argument("--tables", nargs="+", required=True, help="score table TSV files")
    p.add_argument("--normalize", choices=["minmax", "zscore", "none"], default="none")
    p.add_argument(
        "--weights", help="comma-separated name=weight pairs; omit for uniform weights"
    )
    p.add_argument("--name", default="combined")
    p.add_argument("--output", required=True)

    p = sub.add_parser("tune", help="grid-search fusion weights or a threshold")
    p.add_argument("--mode", choices=["weights", "threshold"], required=True)
    p.add_argument("--tables", nargs="+", required=True)
    p.add_argument("--qrels", required=True)
    p.add_argument("--objective", choices=["micro_f1", "macro_f2"], default="micro_f1")
    p.add_argument("--step", type=float, default=0.1, help="weight grid step")
    p.add_argument(
        "--grid", default="0.1:0.9:0.1", help="threshold grid start:stop:step or a,b,c"
    )
    p.add_argument("--select-kind", choices=["top_k", "threshold"], default="top_k")
    p.add_argument("--select-k", type=int, default=1)
    p.add_argument("--select-theta", type=float, default=0.0)
    p.add_argument("--fallback-top1", action="store_true")
    p.add_argument("--output", help="write the winning setting as JSON")

    p = sub.add_parser("entail", help="pick supporting paragraphs with chat models")
    _add_global_options(p, top_level=False)
    p.add_argument("--queries", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--scores", required=True, help="candidate score table TSV")
    p.add_argument("--endpoint", required=True)
    p.add_argument("--models", nargs="+", required=True)
    p.add_argument("--max-paragraphs", type=int)
    p.add_argument("--output-dir", required=True)

    p = sub.add_parser("judge", help="predict tort decisions for a case file")
    _add_global_options(p, top_level=False)
    p.add_argument("--cases", required=True)
    p.add_argument("--mode", choices=["heuristics", "cluster"], required=True)
    p.add_argument("--predictions", help="base predictions JSONL (heuristics mode)")
    p.add_argument("--x", type=float, default=2.0)
    p.add_argument("--theta", type=float, default=0.75)
    p.add_argument("--embed-endpoint")
    p.add_argument("--embed-model")
    p.add_argument("--chat-endpoint")
    p.add_argument("--chat-model")
    p.add_argument("--output-dir", required=True)

    p = sub.add_parser("eval", help="score an existing artifact against gold data")
    p.add_argument("--selection", help="selection TSV (query<TAB>candidate)")
    p.add_argument("--run", help="TREC run file")
    p.add_argument("--answers", help="answers TSV (id<TAB>Y|N)")
    p.add_argument("--predictions", help="predictions JSONL")
    p.add_argument("--qrels")
    p.add_argument("--gold", help="labeled questions JSONL (for --answers)")
    p.add_argument("--cases", help="labeled cases JSONL (for --predictions)")
    p.add_argument("--metrics", default="", help="comma-separated metric names")
    p.add_argument("--json", action="store_true")

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _dispatch(args)
    except (ValidationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ServiceError as exc:
        print(f"service error: {exc}", file=sys.stderr)
        return 3
    except (DataFormatError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 4


def _dispatch(args: argparse.Namespace) -> int:
    return {
        "run": _cmd_run,
        "ingest": _cmd_ingest,
        "stats": _cmd_stats,
        "index": _cmd_index,
        "score": _cmd_score,
        "embed": _cmd_embed,
        "fuse": _cmd_fuse,
        "tune": _cmd_tune,
        "entail": _cmd_entail,
        "judge": _cmd_judge,
        "eval": _cmd_eval,
    }[args.command](args)


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------


def parse_override(text: str) -> tuple[list[str], Any]:
    """Parse PATH=VALUE; the value is read as a TOML literal, else a string."""
    if "=" not in text:
        raise ValidationError(f"--set needs PATH=VALUE, got {text!r}")
    path, raw = text.split("=", 1)
    segments = [s for s in path.strip().split(".") if s]
    if not segments:
        raise ValidationError(f"--set needs a non-empty key path, got {text!r}")
    try:
        value = tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw
    return segments, value


def apply_override(data: dict[str, Any], segments: list[str], value: Any) -> None:
    """Set a dotted path in a raw config dict; integer segments index lists."""
    node: Any = data
    for i, segment in enumerate(segments):
        last = i == len(segments) - 1
        if isinstance(node, list):
            try:
                idx = int(segment)
            except ValueError:
                raise ValidationError(
                    f"{'.'.join(segments)}: {segment!r} must be a list index"
                ) from None
            if not 0 <= idx < len(node):
                raise ValidationError(f"{'.'.join(segments)}: index {idx} out of range")
            if last:
                node[idx] = value
            else:
                node = node[idx]
        elif isinstance(node, dict):
            if last:
                node[segment] = value
            else:
                node = node.setdefault(segment, {})
        else:
            raise ValidationError(f"{'.'.join(segments)}: cannot descend into {type(node).__name__}")


def _cmd_run(args: argparse.Namespace) -> int:
    if bool(args.config) == bool(args.preset):
        raise ValidationError("run needs exactly one of --config or --preset")
    path = Path(args.config) if args.config else pipeline.preset_path(args.preset)
    try:
        data = tomllib.loads(path.read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise ValidationError(f"{path}: not valid TOML: {exc}") from exc
    for override in args.overrides:
        segments, value = parse_override(override)
        apply_override(data, segments, value)
    config = pipeline.config_from_dict(data)
    result = pipeline.execute_run(
        config, cache_dir=args.cache_dir, dry_run=args.dry_run, seed=args.seed
    )
    if result.dry_run:
        print(f"{config.run_tag}: valid; would write to {result.output_dir}")
        for name in sorted(result.outputs):
            print(f"  {name}")
        return 0
    print(f"{config.run_tag}: wrote {len(result.outputs)} artifacts to {result.output_dir}")
    for name in sorted(result.outputs):
        print(f"  {name}")
    if result.metrics:
        print(metrics.format_report(result.metrics), end="")
    for message in result.warnings:
        print(f"warning: {message}", file=sys.stderr)
    stats = result.cache_stats
    print(
        f"service requests: {stats.get('service_requests', 0)}, "
        f"cache hits: {stats.get('cache_hits', 0)}"
    )
    return 0


# ---------------------------------------------------------------------------
# corpus commands
# ---------------------------------------------------------------------------


def _cmd_ingest(args: argparse.Namespace) -> int:
    docs = corpus.read_case_corpus(args.input)
    total = len(docs)
    if args.dedupe:
        docs = corpus.dedupe_collection(docs)
    deduped = len(docs)
    if args.drop_non_english:
        docs = [d for d in docs if not corpus.detect_non_english(d.text)]
    kept = len(docs)
    rules = corpus.PreprocessConfig(
        keep_placeholder_paragraphs=not args.drop_placeholder_paragraphs
    )
    lines = []
    degenerate = 0
    for doc in docs:
        case = corpus.preprocess_case(doc.text, rules, doc_id=doc.id)
        degenerate += case.degenerate
        if args.per_paragraph:
            for idx, text in case.paragraphs:
                lines.append(
                    json.dumps(
                        {"id": f"{case.id}:{idx}", "index": idx, "text": text},
                        sort_keys=True,
                    )
                )
        else:
            lines.append(
                json.dumps(
                    {"id": case.id, "paragraphs": [t for _, t in case.paragraphs]},
                    sort_keys=True,
                )
            )
    atomic_write_text(args.output, "\n".join(lines) + ("\n" if lines else ""))
    print(
        f"read {total}, after dedupe {deduped}, after language filter {kept}, "
        f"degenerate {degenerate}; wrote {len(lines)} records to {args.output}"
    )
    return 0


def _cmd_stats(args: argparse.Namespace) -> int:
    cases = corpus.read_tort_corpus(args.cases)
    if args.filter:
        cases = corpus.filter_tort_cases(cases)
    report = dataclasses.asdict(corpus.corpus_stats(cases))
    if args.json:
        print(metrics.report_json(report))
    else:
        print(metrics.format_report(report), end="")
    return 0


# ---------------------------------------------------------------------------
# retrieval commands
# ---------------------------------------------------------------------------


def _cmd_index(args: argparse.Namespace) -> int:
    docs = pipeline.read_docs(args.corpus)
    stopwords = corpus.ENGLISH_STOPWORDS if args.stopwords == "english" else frozenset()
    tokenization = lexical.Tokenization(
        lowercase=not args.no_lowercase, stopwords=stopwords
    )
    index = lexical.build_index([(d.id, d.text) for d in docs], tokenization)
    lexical.save_index(index, args.output)
    print(f"indexed {index.n_docs} documents, {len(index.postings)} terms -> {args.output}")
    return 0


def _cmd_score(args: argparse.Namespace) -> int:
    index = lexical.load_index(args.index)
    queries = pipeline.read_docs(args.queries)
    params = lexical.Bm25Params(k1=args.k1, b=args.b)
    scores = {}
    for query in sorted(queries, key=lambda d: d.id):
        ranked = lexical.bm25_topk(query.text, index, params, args.k, query.id)
        scores[query.id] = dict(ranked.entries)
    table = fusion.ScoreTable(args.name, scores)
    fusion.write_score_table(table, args.output)
    if args.trec:
        fusion.write_trec_run(table.ranked_lists().values(), args.trec, args.run_tag)
    print(f"scored {len(scores)} queries -> {args.output}")
    return 0


def _cmd_embed(args: argparse.Namespace) -> int:
    docs = pipeline.read_docs(args.input)
    client = embedding.EmbeddingClient(
        embedding.EmbeddingServiceConfig(
            endpoint=args.endpoint,
            model=args.model,
            batch_size=args.batch_size,
            cache_dir=args.cache_dir,
        )
    )
    store = client.embed_store({d.id: d.text for d in docs})
    embedding.write_vectors(store, args.output)
    print(
        f"embedded {len(store)} documents at dim {store.dim} -> {args.output} "
        f"(requests: {client.requests_made}, cache hits: {client.cache_hits})"
    )
    return 0


def _cmd_fuse(args: argparse.Namespace) -> int:
    tables = [fusion.read_score_table(path) for path in args.tables]
    if args.normalize != "none":
        tables = [fusion.normalize_scores(t, args.normalize) for t in tables]
    if args.weights:
        weights = {}
        for pair in args.weights.split(","):
            if "=" not in pair:
                raise ValidationError(f"--weights needs name=weight pairs, got {pair!r}")
            name, raw = pair.split("=", 1)
            weights[name.strip()] = float(raw)
        total = sum(weights.values())
        if total <= 0:
            raise ValidationError("--weights must sum to a positive value")
        wv = fusion.WeightVector({k: v / total for k, v in weights.items()})
    else:
        wv = fusion.WeightVector({t.scorer_name: 1.0 / len(tables) for t in tables})
    combined = fusion.weighted_combine(tables, wv, args.name)
    fusion.write_score_table(combined, args.output)
    print(f"combined {len(tables)} tables -> {args.output}")
    return 0


def _parse_grid(text: str) -> list[float]:
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ValidationError(f"--grid needs start:stop:step, got {text!r}")
        start, stop, step = (float(p) for p in parts)
        if step <= 0:
            raise ValidationError("--grid step must be > 0")
        grid = []
        value = start
        while value <= stop + 1e-12:
            grid.append(round(value, 12))
            value += step
        return grid
    return [float(p) for p in text.split(",") if p.strip()]


def _cmd_tune(args: argparse.Namespace) -> int:
    qrels = corpus.read_qrels(args.qrels)
    objective = metrics.MetricSpec(args.objective)
    tables = [fusion.read_score_table(path) for path in args.tables]
    if args.mode == "weights":
        selector = fusion.SelectionRule(
            kind=args.select_kind,
            k=args.select_k,
            theta=args.select_theta,
            fallback_top1=args.fallback_top1,
        )
        weights, value = fusion.grid_search_weights(
            tables, qrels, objective, step=args.step, selector=selector
        )
        payload = {"weights": weights.weights, "objective_value": value}
        print(f"best weights {weights.weights} ({args.objective}={value:.4f})")
    else:
        if len(tables) != 1:
            raise ValidationError("threshold tuning takes exactly one --tables file")
        lists = tables[0].ranked_lists().values()
        theta, value = fusion.tune_threshold(
            lists, qrels, objective, _parse_grid(args.grid), args.fallback_top1
        )
        payload = {"theta": theta, "objective_value": value}
        print(f"best threshold {theta} ({args.objective}={value:.4f})")
    if args.output:
        atomic_write_text(args.output, json.dumps(payload, sort_keys=True) + "\n")
    return 0


# ---------------------------------------------------------------------------
# composite commands built on run configs
# ---------------------------------------------------------------------------


def _run_adhoc(data: dict[str, Any], args: argparse.Namespace) -> int:
    config = pipeline.config_from_dict(data)
    result = pipeline.execute_run(
        config, cache_dir=args.cache_dir, dry_run=args.dry_run, seed=args.seed
    )
    verb = "would write" if result.dry_run else "wrote"
    print(f"{config.run_tag}: {verb} {sorted(result.outputs)} in {result.output_dir}")
    for message in result.warnings:
        print(f"warning: {message}", file=sys.stderr)
    return 0


def _cmd_entail(args: argparse.Namespace) -> int:
    stage: dict[str, Any] = {
        "kind": "entail",
        "endpoint": args.endpoint,
        "models": list(args.models),
    }
    if args.max_paragraphs is not None:
        stage["max_paragraphs"] = args.max_paragraphs
    data = {
        "schema_version": pipeline.SCHEMA_VERSION,
        "run_tag": "entail",
        "inputs": {"queries": args.queries, "corpus": args.corpus},
        "output": {"dir": args.output_dir},
        "stage": [
            {"kind": "load_scores", "file": args.scores, "name": "candidates"},
            stage,
        ],
    }
    return _run_adhoc(data, args)


def _cmd_judge(args: argparse.Namespace) -> int:
    inputs = {"cases": args.cases}
    if args.mode == "heuristics":
        if not args.predictions:
            raise ValidationError("judge --mode heuristics needs --predictions")
        inputs["predictions"] = args.predictions
        stage: dict[str, Any] = {"kind": "judge_heuristics", "x": args.x}
    else:
        needed = (args.embed_endpoint, args.embed_model, args.chat_endpoint, args.chat_model)
        if not all(needed):
            raise ValidationError(
                "judge --mode cluster needs --embed-endpoint, --embed-model, "
                "--chat-endpoint, and --chat-model"
            )
        stage = {
            "kind": "judge_cluster",
            "theta": args.theta,
            "embed_endpoint": args.embed_endpoint,
            "embed_model": args.embed_model,
            "chat_endpoint": args.chat_endpoint,
            "chat_model": args.chat_model,
        }
    data = {
        "schema_version": pipeline.SCHEMA_VERSION,
        "run_tag": f"judge-{args.mode}",
        "inputs": inputs,
        "output": {"dir": args.output_dir},
        "stage": [stage],
    }
    return _run_adhoc(data, args)


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


def _read_selection(path: str) -> dict[str, set[str]]:
    selections: dict[str, set[str]] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise DataFormatError(f"{path}:{lineno}: expected query<TAB>candidate")
        selections.setdefault(parts[0], set()).add(parts[1])
    return selections


def _read_answers(path: str) -> dict[str, str]:
    answers: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2 or parts[1] not in ("Y", "N"):
            raise DataFormatError(f"{path}:{lineno}: expected id<TAB>Y|N")
        answers[parts[0]] = parts[1]
    return answers


def _cmd_eval(args: argparse.Namespace) -> int:
    wanted = [m for m in args.metrics.split(",") if m.strip()]
    out: dict[str, float] = {}

    if args.selection:
        if not args.qrels:
            raise ValidationError("eval --selection needs --qrels")
        qrels = corpus.read_qrels(args.qrels)
        sets = _read_selection(args.selection)
        for name in wanted or ["micro_f1"]:
            if name == "macro_f2":
                out[name] = metrics.evaluate_retrieved_sets(
                    metrics.MetricSpec("macro_f2"), sets, qrels
                )
            elif name == "micro_f1":
                p, r, f1 = metrics.micro_prf(metrics.counts_from_sets(sets, qrels))
                out["micro_precision"], out["micro_recall"], out["micro_f1"] = p, r, f1
            else:
                raise ValidationError(f"metric {name!r} does not apply to selections")
    elif args.run:
        if not args.qrels:
            raise ValidationError("eval --run needs --qrels")
        qrels = corpus.read_qrels(args.qrels)
        lists = fusion.read_trec_run(args.run)
        for name in wanted or ["recall_at_100"]:
            if not name.startswith("recall_at_"):
                raise ValidationError(f"metric {name!r} does not apply to ranked runs")
            k = int(name[len("recall_at_"):])
            out[name] = metrics.evaluate_ranked_lists(
                metrics.MetricSpec("recall_at_k", k=k), lists, qrels
            )
    elif args.answers:
        if not args.gold:
            raise ValidationError("eval --answers needs --gold")
        answers = _read_answers(args.answers)
        gold = {
            q.id: q.label for q in pipeline.read_questions(args.gold) if q.label is not None
        }
        correct = sum(1 for qid, label in gold.items() if answers.get(qid) == label)
        out["accuracy"] = metrics.accuracy(correct, len(gold))
    elif args.predictions:
        if not args.cases:
            raise ValidationError("eval --predictions needs --cases")
        from . import judgment

        predictions = judgment.read_predictions(args.predictions)
        cases = {c.id: c for c in corpus.read_tort_corpus(args.cases)}
        gold_tort = {cid: c.tort_label for cid, c in cases.items() if c.tort_label is not None}
        correct = sum(
            1 for cid, (tort, _, _) in predictions.items() if gold_tort.get(cid) == tort
        )
        out["accuracy"] = metrics.accuracy(correct, len(gold_tort))
        pred_labels: list[bool] = []
        gold_labels: list[bool] = []
        for cid, (_, p_labels, d_labels) in sorted(predictions.items()):
            case = cases.get(cid)
            if case is None:
                continue
            for label, claim in zip(p_labels + d_labels, case.claims):
                if claim.accepted is not None:
                    pred_labels.append(label)
                    gold_labels.append(claim.accepted)
        if gold_labels:
            out["label_micro_f1"] = metrics.micro_f1_labels(pred_labels, gold_labels)
    else:
        raise ValidationError(
            "eval needs one of --selection, --run, --answers, or --predictions"
        )

    if args.json:
        print(metrics.report_json(out))
    else:
        print(metrics.format_report(out), end="")
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
