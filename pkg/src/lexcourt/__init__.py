"""Multi-stage legal retrieval, entailment, and judgment pipelines."""

from .corpus import (
    CaseDocument,
    Claim,
    LanguageHeuristicConfig,
    PreprocessConfig,
    Qrels,
    RawDocument,
    StatsReport,
    TortCase,
    corpus_stats,
    dedupe_collection,
    detect_non_english,
    filter_tort_cases,
    normalize_whitespace,
    preprocess_case,
    read_case_corpus,
    read_qrels,
    read_tort_corpus,
    write_qrels,
)
from .embedding import (
    EmbeddingClient,
    EmbeddingServiceConfig,
    EmbeddingStore,
    cosine,
    dot,
    embed_texts,
    read_vectors,
    score_table_from_store,
    topk_similar,
    topk_similar_by_id,
    write_vectors,
)
from .errors import DataFormatError, LexcourtError, ServiceError, ValidationError
from .fusion import (
    RankedList,
    ScoreTable,
    SelectionRule,
    WeightVector,
    grid_search_weights,
    majority_vote_topm,
    normalize_scores,
    read_score_table,
    read_trec_run,
    similarity_informed_weights,
    threshold_select,
    tune_threshold,
    weighted_combine,
    write_score_table,
    write_trec_run,
)
from .judgment import (
    OUTLIER,
    ClusterAssignment,
    PartyTally,
    SubargumentVerdict,
    apply_judgment_heuristics,
    cluster_vote,
    greedy_cluster,
    inherit_unclustered,
    parse_cluster_verdict,
    predict_with_clusters,
    re_refine,
    read_predictions,
    single_cluster_fallback,
    tp_reversal,
    write_predictions,
)
from .lexical import (
    Bm25Params,
    InvertedIndex,
    Tokenization,
    bm25_topk,
    build_index,
    load_index,
    save_index,
    tokenize,
)
from .llm import (
    BinaryAnswer,
    ExampleRecord,
    LlmClient,
    LlmClientConfig,
    PromptTemplate,
    agreement_vote,
    entail_select,
    extract_binary_answer,
    extract_paragraph_ids,
    load_template,
    majority_vote_answers,
    render_template,
    select_fewshot_examples,
    summarize_case,
    yesno_answer,
)
from .metrics import (
    MetricSpec,
    RetrievalCounts,
    accuracy,
    counts_from_sets,
    evaluate_ranked_lists,
    evaluate_retrieved_sets,
    f_from_pr,
    format_report,
    macro_f2,
    micro_f1_labels,
    micro_prf,
    recall_at_k,
    report_json,
)
from .pipeline import (
    RunConfig,
    RunResult,
    config_from_dict,
    execute_run,
    load_config,
    preset_path,
    validate_config,
)

__version__ = "0.1.0"

__all__ = [
    "BinaryAnswer",
    "Bm25Params",
    "CaseDocument",
    "Claim",
    "ClusterAssignment",
    "DataFormatError",
    "EmbeddingClient",
    "EmbeddingServiceConfig",
    "EmbeddingStore",
    "ExampleRecord",
    "InvertedIndex",
    "LanguageHeuristicConfig",
    "LexcourtError",
    "LlmClient",
    "LlmClientConfig",
    "MetricSpec",
    "OUTLIER",
    "PartyTally",
    "PreprocessConfig",
    "PromptTemplate",
    "Qrels",
    "RankedList",
    "RawDocument",
    "RetrievalCounts",
    "RunConfig",
    "RunResult",
    "ScoreTable",
    "SelectionRule",
    "ServiceError",
    "StatsReport",
    "SubargumentVerdict",
    "Tokenization",
    "TortCase",
    "ValidationError",
    "WeightVector",
    "accuracy",
    "agreement_vote",
    "apply_judgment_heuristics",
    "bm25_topk",
    "build_index",
    "cluster_vote",
    "config_from_dict",
    "corpus_stats",
    "cosine",
    "counts_from_sets",
    "dedupe_collection",
    "detect_non_english",
    "dot",
    "embed_texts",
    "entail_select",
    "evaluate_ranked_lists",
    "evaluate_retrieved_sets",
    "execute_run",
    "extract_binary_answer",
    "extract_paragraph_ids",
    "f_from_pr",
    "filter_tort_cases",
    "format_report",
    "greedy_cluster",
    "grid_search_weights",
    "inherit_unclustered",
    "load_config",
    "load_index",
    "load_template",
    "macro_f2",
    "majority_vote_answers",
    "majority_vote_topm",
    "micro_f1_labels",
    "micro_prf",
    "normalize_scores",
    "normalize_whitespace",
    "parse_cluster_verdict",
    "predict_with_clusters",
    "preprocess_case",
    "preset_path",
    "re_refine",
    "read_case_corpus",
    "read_predictions",
    "read_qrels",
    "read_score_table",
    "read_tort_corpus",
    "read_trec_run",
    "read_vectors",
    "recall_at_k",
    "render_template",
    "report_json",
    "save_index",
    "score_table_from_store",
    "select_fewshot_examples",
    "similarity_informed_weights",
    "single_cluster_fallback",
    "summarize_case",
    "threshold_select",
    "tokenize",
    "topk_similar",
    "topk_similar_by_id",
    "tp_reversal",
    "tune_threshold",
    "validate_config",
    "weighted_combine",
    "write_predictions",
    "write_qrels",
    "write_score_table",
    "write_trec_run",
    "write_vectors",
]
