"""Generate small synthetic datasets under data/ for the bundled presets.

Usage: python scripts/make_demo_data.py [--root data] [--seed 7]

The texts are word salad over a fixed vocabulary; relevant documents share
vocabulary with their query so lexical and embedding scorers have signal.
"""
import argparse
import json
import random
from pathlib import Path

VOCABULARY = [
    "court", "appeal", "damages", "contract", "negligence", "breach", "duty",
    "plaintiff", "defendant", "liability", "statute", "evidence", "motion",
    "judgment", "remedy", "tort", "claim", "injury", "property", "license",
    "patent", "trademark", "lease", "employment", "dismissal", "notice",
    "hearing", "testimony", "witness", "ruling", "order", "costs", "interest",
    "settlement", "arbitration", "jurisdiction", "venue", "filing", "deadline",
    "discovery",
]


def sentence(rng: random.Random, terms: list[str], length: int = 12) -> str:
    words = [rng.choice(terms) for _ in range(length)]
    return " ".join(words) + "."


def write_jsonl(path: Path, rows: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(
        "\n".join(json.dumps(r, sort_keys=True) for r in rows) + "\n", encoding="utf-8"
    )


def write_task1(root: Path, rng: random.Random) -> None:
    queries, docs, qrels = [], [], []
    for qi in range(5):
        qid = f"q{qi + 1:02d}"
        terms = rng.sample(VOCABULARY, 8)
        queries.append({"id": qid, "text": " ".join(sentence(rng, terms) for _ in range(3))})
        for di in range(2):
            did = f"{qid}-rel{di}"
            docs.append(
                {"id": did, "text": " ".join(sentence(rng, terms) for _ in range(5))}
            )
            qrels.append(f"{qid}\t0\t{did}\t1")
    for di in range(20):
        terms = rng.sample(VOCABULARY, 8)
        docs.append(
            {"id": f"bg{di:02d}", "text": " ".join(sentence(rng, terms) for _ in range(5))}
        )
    write_jsonl(root / "queries.jsonl", queries)
    write_jsonl(root / "corpus.jsonl", sorted(docs, key=lambda d: d["id"]))
    (root / "qrels.tsv").write_text("\n".join(qrels) + "\n", encoding="utf-8")


def write_task2(root: Path, rng: random.Random) -> None:
    queries, paragraphs, qrels = [], [], []
    for qi in range(10):
        qid = f"q{qi + 1:02d}"
        terms = rng.sample(VOCABULARY, 6)
        queries.append({"id": qid, "text": sentence(rng, terms, 16)})
        n_rel = rng.randint(1, 3)
        n_total = rng.randint(30, 40)
        rel_at = set(rng.sample(range(1, n_total + 1), n_rel))
        for idx in range(1, n_total + 1):
            pid = f"{qid}-p{idx:03d}"
            pool = terms if idx in rel_at else rng.sample(VOCABULARY, 6)
            paragraphs.append(
                {
                    "id": pid,
                    "query_id": qid,
                    "index": idx,
                    "text": sentence(rng, pool, 20),
                }
            )
            if idx in rel_at:
                qrels.append(f"{qid}\t0\t{pid}\t1")
    write_jsonl(root / "queries.jsonl", queries)
    write_jsonl(root / "paragraphs.jsonl", paragraphs)
    (root / "qrels.tsv").write_text("\n".join(qrels) + "\n", encoding="utf-8")


def write_task3(root: Path, rng: random.Random) -> None:
    root.mkdir(parents=True, exist_ok=True)
    articles = [f"a{ai:02d}" for ai in range(20)]
    qids = [f"q{qi + 1:02d}" for qi in range(8)]
    qrels = []
    relevant = {}
    for qid in qids:
        relevant[qid] = set(rng.sample(articles, rng.randint(1, 2)))
        for aid in sorted(relevant[qid]):
            qrels.append(f"{qid}\t0\t{aid}\t1")
    (root / "qrels.tsv").write_text("\n".join(qrels) + "\n", encoding="utf-8")

    def score_lines(name: str, informative: bool) -> str:
        lines = [f"# scorer: {name}"]
        for qid in qids:
            for aid in articles:
                if informative:
                    base = 0.8 if aid in relevant[qid] else 0.2
                else:
                    base = 0.5
                value = base + rng.uniform(-0.15, 0.15)
                lines.append(f"{qid}\t{aid}\t{value!r}")
        return "\n".join(lines) + "\n"

    (root / "scores-lexical.tsv").write_text(score_lines("lexical", True), encoding="utf-8")
    (root / "scores-dense.tsv").write_text(score_lines("dense", False), encoding="utf-8")
    (root / "scores-reranker.tsv").write_text(score_lines("reranker", False), encoding="utf-8")

    def vector_lines(ids: list[str]) -> str:
        lines = ["dim=4"]
        for vid in ids:
            vec = [rng.uniform(-1, 1) for _ in range(4)]
            norm = sum(x * x for x in vec) ** 0.5
            lines.append(vid + "\t" + " ".join(repr(x / norm) for x in vec))
        return "\n".join(lines) + "\n"

    dev_ids = [f"d{di:02d}" for di in range(6)]
    (root / "query-vectors.tsv").write_text(vector_lines(qids), encoding="utf-8")
    (root / "dev-vectors.tsv").write_text(vector_lines(dev_ids), encoding="utf-8")
    dev_metrics = {
        scorer: {did: round(rng.uniform(0.2, 0.9), 3) for did in dev_ids}
        for scorer in ("lexical", "dense", "reranker")
    }
    (root / "dev-metrics.json").write_text(
        json.dumps(dev_metrics, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def write_task4(root: Path, rng: random.Random) -> None:
    def record(prefix: str, i: int) -> dict:
        article_ids = sorted(rng.sample([f"art{n}" for n in range(1, 9)], rng.randint(1, 2)))
        terms = rng.sample(VOCABULARY, 6)
        return {
            "id": f"{prefix}{i:02d}",
            "articles": [f"Article {aid}: {sentence(rng, terms, 14)}" for aid in article_ids],
            "article_ids": article_ids,
            "question": sentence(rng, terms, 10),
            "label": rng.choice(["Y", "N"]),
        }

    write_jsonl(root / "questions.jsonl", [record("h", i) for i in range(12)])
    write_jsonl(root / "examples.jsonl", [record("e", i) for i in range(20)])


def write_task5(root: Path, rng: random.Random) -> None:
    cases, base = [], []
    for ci in range(8):
        cid = f"c{ci + 1:02d}"
        terms = rng.sample(VOCABULARY, 6)
        n_p, n_d = rng.randint(1, 4), rng.randint(1, 3)
        p_claims = [
            {"text": sentence(rng, terms, 10), "accepted": rng.random() < 0.6}
            for _ in range(n_p)
        ]
        d_claims = [
            {"text": sentence(rng, terms, 10), "accepted": rng.random() < 0.4}
            for _ in range(n_d)
        ]
        tort = sum(c["accepted"] for c in p_claims) > sum(c["accepted"] for c in d_claims)
        cases.append(
            {
                "id": cid,
                "facts": [sentence(rng, terms, 12) for _ in range(rng.randint(1, 3))],
                "plaintiff_claims": p_claims,
                "defendant_claims": d_claims,
                "tort": tort,
            }
        )
        base.append(
            {
                "id": cid,
                "tort": rng.random() < 0.5,
                "plaintiff_labels": [rng.random() < 0.5 for _ in range(n_p)],
                "defendant_labels": [rng.random() < 0.5 for _ in range(n_d)],
            }
        )
    write_jsonl(root / "cases.jsonl", cases)
    write_jsonl(root / "base-predictions.jsonl", base)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--root", default="data")
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args()
    rng = random.Random(args.seed)
    root = Path(args.root)
    write_task1(root / "task1", rng)
    write_task2(root / "task2", rng)
    write_task3(root / "task3", rng)
    write_task4(root / "task4", rng)
    write_task5(root / "task5", rng)
    print(f"wrote synthetic datasets under {root}/task1 .. {root}/task5")


if __name__ == "__main__":
    main()
