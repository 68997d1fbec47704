import json

import pytest

from lexcourt import cli, fusion, judgment, pipeline
from lexcourt.corpus import Qrels, write_qrels
from lexcourt.errors import ServiceError, ValidationError


def write_jsonl(path, rows):
    path.write_text("\n".join(json.dumps(r) for r in rows) + "\n", encoding="utf-8")


def write_scores(path, scorer, scores):
    fusion.write_score_table(fusion.ScoreTable(scorer, scores), path)


def write_run_config(tmp_path, stages=None, extra=""):
    stages = stages or ['[[stage]]\nkind = "bm25"', '[[stage]]\nkind = "topk"\nk = 2']
    text = "\n".join(
        [
            "schema_version = 1",
            'run_tag = "cli-test"',
            "seed = 3",
            "[inputs]",
            f'queries = "{tmp_path / "queries.jsonl"}"',
            f'corpus = "{tmp_path / "corpus.jsonl"}"',
            "[output]",
            f'dir = "{tmp_path / "out"}"',
            extra,
        ]
        + stages
    )
    path = tmp_path / "run.toml"
    path.write_text(text, encoding="utf-8")
    return path


@pytest.fixture
def retrieval_files(tmp_path):
    write_jsonl(
        tmp_path / "queries.jsonl",
        [{"id": "q1", "text": "alpha beta"}, {"id": "q2", "text": "gamma"}],
    )
    write_jsonl(
        tmp_path / "corpus.jsonl",
        [
            {"id": "d1", "text": "alpha beta alpha"},
            {"id": "d2", "text": "alpha delta"},
            {"id": "d3", "text": "gamma gamma"},
        ],
    )
    write_qrels(
        Qrels({"q1": frozenset({"d1"}), "q2": frozenset({"d3"})}),
        tmp_path / "qrels.tsv",
    )
    return tmp_path


class TestParseOverride:
    def test_toml_literals(self):
        assert cli.parse_override("stage.0.k=35") == (["stage", "0", "k"], 35)
        assert cli.parse_override("seed=2") == (["seed"], 2)
        assert cli.parse_override("x=true") == (["x"], True)
        assert cli.parse_override("x=1.5") == (["x"], 1.5)
        assert cli.parse_override('run_tag="quoted"') == (["run_tag"], "quoted")

    def test_bare_strings_pass_through(self):
        assert cli.parse_override("output.dir=runs/x") == (["output", "dir"], "runs/x")

    def test_missing_equals(self):
        with pytest.raises(ValidationError, match="PATH=VALUE"):
            cli.parse_override("stage.0.k")

    def test_empty_path(self):
        with pytest.raises(ValidationError, match="non-empty key path"):
            cli.parse_override("=5")


class TestApplyOverride:
    def test_nested_tables_are_created(self):
        data = {}
        cli.apply_override(data, ["output", "dir"], "runs/x")
        assert data == {"output": {"dir": "runs/x"}}

    def test_list_indexing(self):
        data = {"stage": [{"kind": "bm25"}, {"kind": "topk", "k": 2}]}
        cli.apply_override(data, ["stage", "1", "k"], 9)
        assert data["stage"][1]["k"] == 9

    def test_list_index_must_be_numeric(self):
        with pytest.raises(ValidationError, match="must be a list index"):
            cli.apply_override({"stage": []}, ["stage", "first"], 1)

    def test_list_index_range(self):
        with pytest.raises(ValidationError, match="out of range"):
            cli.apply_override({"stage": []}, ["stage", "0"], 1)

    def test_cannot_descend_into_scalar(self):
        with pytest.raises(ValidationError, match="cannot descend"):
            cli.apply_override({"seed": 3}, ["seed", "deep"], 1)


class TestRunCommand:
    def test_run_writes_artifacts(self, retrieval_files, capsys):
        config = write_run_config(retrieval_files)
        assert cli.main(["run", "--config", str(config)]) == 0
        out = capsys.readouterr().out
        assert "cli-test: wrote 4 artifacts" in out
        assert "selection.tsv" in out
        selection = (retrieval_files / "out" / "selection.tsv").read_text()
        assert selection == "q1\td1\nq1\td2\nq2\td3\n"

    def test_dry_run_prints_plan_only(self, retrieval_files, capsys):
        config = write_run_config(retrieval_files)
        assert cli.main(["run", "--config", str(config), "--dry-run"]) == 0
        out = capsys.readouterr().out
        assert "valid; would write" in out
        assert not (retrieval_files / "out").exists()

    def test_global_options_before_subcommand(self, retrieval_files, capsys):
        config = write_run_config(retrieval_files)
        assert cli.main(["--dry-run", "run", "--config", str(config)]) == 0
        assert "valid; would write" in capsys.readouterr().out

    def test_config_before_subcommand_survives(self, retrieval_files, capsys):
        # subparser defaults must not clobber values parsed before "run"
        config = write_run_config(retrieval_files)
        assert cli.main(["--config", str(config), "run", "--dry-run"]) == 0
        assert "valid; would write" in capsys.readouterr().out

    def test_seed_override_lands_in_meta(self, retrieval_files):
        config = write_run_config(retrieval_files)
        assert cli.main(["run", "--config", str(config), "--seed", "11"]) == 0
        meta = json.loads((retrieval_files / "out" / "run_meta.json").read_text())
        assert meta["seed"] == 11

    def test_set_overrides_apply(self, retrieval_files):
        config = write_run_config(retrieval_files)
        assert cli.main(["run", "--config", str(config), "--set", "stage.1.k=1"]) == 0
        selection = (retrieval_files / "out" / "selection.tsv").read_text()
        assert selection == "q1\td1\nq2\td3\n"

    def test_config_and_preset_are_exclusive(self, retrieval_files, capsys):
        config = write_run_config(retrieval_files)
        code = cli.main(["run", "--config", str(config), "--preset", "task2-run1"])
        assert code == 2
        assert "exactly one" in capsys.readouterr().err

    def test_neither_config_nor_preset(self, capsys):
        assert cli.main(["run"]) == 2
        assert "exactly one" in capsys.readouterr().err

    def test_unknown_preset(self, capsys):
        assert cli.main(["run", "--preset", "nope"]) == 2
        assert "unknown preset" in capsys.readouterr().err

    def test_invalid_toml_exits_2(self, tmp_path, capsys):
        path = tmp_path / "bad.toml"
        path.write_text("= broken", encoding="utf-8")
        assert cli.main(["run", "--config", str(path)]) == 2
        assert "error:" in capsys.readouterr().err

    def test_invalid_config_exits_2(self, tmp_path, capsys):
        path = tmp_path / "bad.toml"
        path.write_text('schema_version = 5\nrun_tag = "x"', encoding="utf-8")
        assert cli.main(["run", "--config", str(path)]) == 2
        assert "schema_version" in capsys.readouterr().err

    def test_missing_config_file_exits_4(self, tmp_path, capsys):
        assert cli.main(["run", "--config", str(tmp_path / "absent.toml")]) == 4
        assert "data error" in capsys.readouterr().err

    def test_service_error_exits_3(self, retrieval_files, capsys, monkeypatch):
        def boom(*args, **kwargs):
            raise ServiceError("endpoint unreachable")

        monkeypatch.setattr(pipeline, "execute_run", boom)
        config = write_run_config(retrieval_files)
        assert cli.main(["run", "--config", str(config)]) == 3
        assert "service error" in capsys.readouterr().err

    def test_data_error_exits_4(self, retrieval_files, capsys):
        (retrieval_files / "corpus.jsonl").write_text("{broken\n", encoding="utf-8")
        config = write_run_config(retrieval_files)
        assert cli.main(["run", "--config", str(config)]) == 4
        assert "data error" in capsys.readouterr().err


class TestCorpusCommands:
    def test_ingest_per_case(self, tmp_path, capsys):
        write_jsonl(
            tmp_path / "raw.jsonl",
            [{"id": "c1", "text": "[1] First point.\n\n[2] Second point."}],
        )
        out = tmp_path / "clean.jsonl"
        code = cli.main(
            ["ingest", "--input", str(tmp_path / "raw.jsonl"), "--output", str(out)]
        )
        assert code == 0
        record = json.loads(out.read_text().splitlines()[0])
        assert record == {"id": "c1", "paragraphs": ["First point.", "Second point."]}
        assert "wrote 1 records" in capsys.readouterr().out

    def test_ingest_per_paragraph(self, tmp_path):
        write_jsonl(
            tmp_path / "raw.jsonl",
            [{"id": "c1", "text": "[1] First point.\n\n[2] Second point."}],
        )
        out = tmp_path / "paras.jsonl"
        code = cli.main(
            [
                "ingest",
                "--input", str(tmp_path / "raw.jsonl"),
                "--output", str(out),
                "--per-paragraph",
            ]
        )
        assert code == 0
        records = [json.loads(line) for line in out.read_text().splitlines()]
        assert records[0] == {"id": "c1:1", "index": 1, "text": "First point."}
        assert records[1]["id"] == "c1:2"

    def test_stats_json(self, tmp_path, capsys):
        write_jsonl(
            tmp_path / "cases.jsonl",
            [
                {
                    "id": "c1",
                    "facts": ["f"],
                    "plaintiff_claims": [{"text": "p"}],
                    "defendant_claims": [{"text": "d"}],
                    "tort": True,
                }
            ],
        )
        code = cli.main(["stats", "--cases", str(tmp_path / "cases.jsonl"), "--json"])
        assert code == 0
        report = json.loads(capsys.readouterr().out)
        assert report["samples"] == 1


class TestRetrievalCommands:
    def test_index_then_score(self, retrieval_files, capsys):
        index_path = retrieval_files / "index.json"
        code = cli.main(
            ["index", "--corpus", str(retrieval_files / "corpus.jsonl"),
             "--output", str(index_path)]
        )
        assert code == 0
        assert "indexed 3 documents" in capsys.readouterr().out

        scores_path = retrieval_files / "scores.tsv"
        trec_path = retrieval_files / "run.trec"
        code = cli.main(
            ["score", "--index", str(index_path),
             "--queries", str(retrieval_files / "queries.jsonl"),
             "--output", str(scores_path), "--trec", str(trec_path)]
        )
        assert code == 0
        table = fusion.read_score_table(scores_path)
        assert table.scorer_name == "bm25"
        assert table.ranked("q1").ids() == ["d1", "d2"]
        assert trec_path.read_text().split()[:4] == ["q1", "Q0", "d1", "1"]

    def test_embed_writes_vectors(self, tmp_path, mock_server, capsys):
        write_jsonl(tmp_path / "docs.jsonl", [{"id": "d1", "text": "alpha"}])
        out = tmp_path / "vectors.tsv"
        code = cli.main(
            ["embed", "--input", str(tmp_path / "docs.jsonl"),
             "--endpoint", mock_server.embeddings_url,
             "--model", "embed-small", "--output", str(out)]
        )
        assert code == 0
        assert "embedded 1 documents at dim 8" in capsys.readouterr().out
        assert out.exists()

    def test_fuse_uniform_weights(self, tmp_path):
        write_scores(tmp_path / "a.tsv", "a", {"q1": {"d1": 1.0, "d2": 0.0}})
        write_scores(tmp_path / "b.tsv", "b", {"q1": {"d1": 0.0, "d2": 1.0}})
        out = tmp_path / "combined.tsv"
        code = cli.main(
            ["fuse", "--tables", str(tmp_path / "a.tsv"), str(tmp_path / "b.tsv"),
             "--output", str(out)]
        )
        assert code == 0
        table = fusion.read_score_table(out)
        assert table.scores["q1"] == {"d1": 0.5, "d2": 0.5}

    def test_fuse_named_weights(self, tmp_path):
        write_scores(tmp_path / "a.tsv", "a", {"q1": {"d1": 1.0, "d2": 0.0}})
        write_scores(tmp_path / "b.tsv", "b", {"q1": {"d1": 0.0, "d2": 1.0}})
        out = tmp_path / "combined.tsv"
        code = cli.main(
            ["fuse", "--tables", str(tmp_path / "a.tsv"), str(tmp_path / "b.tsv"),
             "--weights", "a=3,b=1", "--output", str(out)]
        )
        assert code == 0
        table = fusion.read_score_table(out)
        assert table.scores["q1"] == {"d1": 0.75, "d2": 0.25}

    def test_fuse_rejects_bad_weights(self, tmp_path, capsys):
        write_scores(tmp_path / "a.tsv", "a", {"q1": {"d1": 1.0}})
        code = cli.main(
            ["fuse", "--tables", str(tmp_path / "a.tsv"),
             "--weights", "nonsense", "--output", str(tmp_path / "o.tsv")]
        )
        assert code == 2
        assert "name=weight" in capsys.readouterr().err


class TestTuneCommand:
    def test_weights_mode(self, tmp_path, capsys):
        write_scores(tmp_path / "good.tsv", "good",
                     {"q1": {"d1": 1.0, "d2": 0.0}, "q2": {"d3": 1.0, "d4": 0.0}})
        write_scores(tmp_path / "noise.tsv", "noise",
                     {"q1": {"d1": 0.0, "d2": 1.0}, "q2": {"d3": 0.0, "d4": 1.0}})
        write_qrels(Qrels({"q1": frozenset({"d1"}), "q2": frozenset({"d3"})}),
                    tmp_path / "qrels.tsv")
        out = tmp_path / "weights.json"
        code = cli.main(
            ["tune", "--mode", "weights",
             "--tables", str(tmp_path / "good.tsv"), str(tmp_path / "noise.tsv"),
             "--qrels", str(tmp_path / "qrels.tsv"), "--step", "0.5",
             "--output", str(out)]
        )
        assert code == 0
        assert "best weights" in capsys.readouterr().out
        payload = json.loads(out.read_text())
        assert payload == {"objective_value": 1.0, "weights": {"good": 1.0, "noise": 0.0}}

    def test_threshold_mode(self, tmp_path, capsys):
        write_scores(tmp_path / "s.tsv", "s",
                     {"q1": {"d1": 0.9, "d2": 0.4}, "q2": {"d5": 0.2, "d6": 0.1}})
        write_qrels(Qrels({"q1": frozenset({"d1"}), "q2": frozenset({"d5"})}),
                    tmp_path / "qrels.tsv")
        out = tmp_path / "theta.json"
        code = cli.main(
            ["tune", "--mode", "threshold", "--tables", str(tmp_path / "s.tsv"),
             "--qrels", str(tmp_path / "qrels.tsv"),
             "--grid", "0.1:0.9:0.2", "--fallback-top1", "--output", str(out)]
        )
        assert code == 0
        assert "best threshold" in capsys.readouterr().out
        payload = json.loads(out.read_text())
        assert payload == {"objective_value": 1.0, "theta": 0.5}

    def test_threshold_mode_takes_one_table(self, tmp_path, capsys):
        write_scores(tmp_path / "a.tsv", "a", {"q1": {"d1": 1.0}})
        write_scores(tmp_path / "b.tsv", "b", {"q1": {"d1": 1.0}})
        write_qrels(Qrels({"q1": frozenset({"d1"})}), tmp_path / "qrels.tsv")
        code = cli.main(
            ["tune", "--mode", "threshold",
             "--tables", str(tmp_path / "a.tsv"), str(tmp_path / "b.tsv"),
             "--qrels", str(tmp_path / "qrels.tsv")]
        )
        assert code == 2
        assert "exactly one" in capsys.readouterr().err


class TestCompositeCommands:
    def test_entail_command(self, tmp_path, mock_server, capsys):
        write_jsonl(
            tmp_path / "queries.jsonl",
            [{"id": "q1", "text": "negligence causation damages breach"}],
        )
        write_jsonl(
            tmp_path / "corpus.jsonl",
            [
                {"id": "p1", "query_id": "q1", "index": 1,
                 "text": "The contract requires notice."},
                {"id": "p2", "query_id": "q1", "index": 2,
                 "text": "Negligence depends on duty breach causation and damages."},
            ],
        )
        write_scores(tmp_path / "cand.tsv", "cand", {"q1": {"p1": 2.0, "p2": 1.5}})
        code = cli.main(
            ["entail", "--queries", str(tmp_path / "queries.jsonl"),
             "--corpus", str(tmp_path / "corpus.jsonl"),
             "--scores", str(tmp_path / "cand.tsv"),
             "--endpoint", mock_server.chat_url, "--models", "reason-a",
             "--output-dir", str(tmp_path / "out")]
        )
        assert code == 0
        assert (tmp_path / "out" / "selection.tsv").read_text() == "q1\tp2\n"

    def test_judge_heuristics_command(self, tmp_path):
        write_jsonl(
            tmp_path / "cases.jsonl",
            [
                {
                    "id": "c1",
                    "facts": [],
                    "plaintiff_claims": [{"text": "p0"}, {"text": "p1"}, {"text": "p2"}],
                    "defendant_claims": [{"text": "d0"}, {"text": "d1"}, {"text": "d2"}],
                }
            ],
        )
        judgment.write_predictions(
            {"c1": (False, [True, True, False], [False, False, True])},
            tmp_path / "base.jsonl",
        )
        code = cli.main(
            ["judge", "--cases", str(tmp_path / "cases.jsonl"),
             "--mode", "heuristics", "--predictions", str(tmp_path / "base.jsonl"),
             "--output-dir", str(tmp_path / "out")]
        )
        assert code == 0
        out = judgment.read_predictions(tmp_path / "out" / "predictions.jsonl")
        assert out["c1"] == (True, [True, True, True], [False, False, False])

    def test_judge_heuristics_needs_predictions(self, tmp_path, capsys):
        code = cli.main(
            ["judge", "--cases", str(tmp_path / "cases.jsonl"),
             "--mode", "heuristics", "--output-dir", str(tmp_path / "out")]
        )
        assert code == 2
        assert "needs --predictions" in capsys.readouterr().err

    def test_judge_cluster_needs_endpoints(self, tmp_path, capsys):
        code = cli.main(
            ["judge", "--cases", str(tmp_path / "cases.jsonl"),
             "--mode", "cluster", "--output-dir", str(tmp_path / "out")]
        )
        assert code == 2
        assert "--embed-endpoint" in capsys.readouterr().err


class TestEvalCommand:
    def test_selection_metrics(self, tmp_path, capsys):
        (tmp_path / "selection.tsv").write_text("q1\td1\nq2\td9\n", encoding="utf-8")
        write_qrels(Qrels({"q1": frozenset({"d1"}), "q2": frozenset({"d3"})}),
                    tmp_path / "qrels.tsv")
        code = cli.main(
            ["eval", "--selection", str(tmp_path / "selection.tsv"),
             "--qrels", str(tmp_path / "qrels.tsv"), "--json"]
        )
        assert code == 0
        report = json.loads(capsys.readouterr().out)
        assert report["micro_precision"] == 0.5
        assert report["micro_recall"] == 0.5
        assert report["micro_f1"] == 0.5

    def test_selection_rejects_foreign_metric(self, tmp_path, capsys):
        (tmp_path / "selection.tsv").write_text("q1\td1\n", encoding="utf-8")
        write_qrels(Qrels({"q1": frozenset({"d1"})}), tmp_path / "qrels.tsv")
        code = cli.main(
            ["eval", "--selection", str(tmp_path / "selection.tsv"),
             "--qrels", str(tmp_path / "qrels.tsv"), "--metrics", "accuracy"]
        )
        assert code == 2
        assert "does not apply" in capsys.readouterr().err

    def test_run_recall(self, tmp_path, capsys):
        table = fusion.ScoreTable("s", {"q1": {"d1": 2.0, "d2": 1.0}})
        fusion.write_trec_run(table.ranked_lists().values(), tmp_path / "run.trec", "tag")
        write_qrels(Qrels({"q1": frozenset({"d1"})}), tmp_path / "qrels.tsv")
        code = cli.main(
            ["eval", "--run", str(tmp_path / "run.trec"),
             "--qrels", str(tmp_path / "qrels.tsv"),
             "--metrics", "recall_at_1", "--json"]
        )
        assert code == 0
        assert json.loads(capsys.readouterr().out) == {"recall_at_1": 1.0}

    def test_answers_accuracy(self, tmp_path, capsys):
        (tmp_path / "answers.tsv").write_text("h1\tY\nh2\tN\n", encoding="utf-8")
        write_jsonl(
            tmp_path / "gold.jsonl",
            [
                {"id": "h1", "question": "?", "premise": "a", "label": "Y"},
                {"id": "h2", "question": "?", "premise": "a", "label": "Y"},
            ],
        )
        code = cli.main(
            ["eval", "--answers", str(tmp_path / "answers.tsv"),
             "--gold", str(tmp_path / "gold.jsonl"), "--json"]
        )
        assert code == 0
        assert json.loads(capsys.readouterr().out) == {"accuracy": 0.5}

    def test_predictions_metrics(self, tmp_path, capsys):
        write_jsonl(
            tmp_path / "cases.jsonl",
            [
                {
                    "id": "c1",
                    "facts": [],
                    "plaintiff_claims": [{"text": "p", "accepted": True}],
                    "defendant_claims": [{"text": "d", "accepted": False}],
                    "tort": True,
                }
            ],
        )
        judgment.write_predictions({"c1": (True, [True], [False])}, tmp_path / "pred.jsonl")
        code = cli.main(
            ["eval", "--predictions", str(tmp_path / "pred.jsonl"),
             "--cases", str(tmp_path / "cases.jsonl"), "--json"]
        )
        assert code == 0
        report = json.loads(capsys.readouterr().out)
        assert report == {"accuracy": 1.0, "label_micro_f1": 1.0}

    def test_eval_needs_an_artifact(self, capsys):
        assert cli.main(["eval"]) == 2
        assert "needs one of" in capsys.readouterr().err

    def test_malformed_selection_exits_4(self, tmp_path, capsys):
        (tmp_path / "selection.tsv").write_text("onlyonefield\n", encoding="utf-8")
        write_qrels(Qrels({"q1": frozenset({"d1"})}), tmp_path / "qrels.tsv")
        code = cli.main(
            ["eval", "--selection", str(tmp_path / "selection.tsv"),
             "--qrels", str(tmp_path / "qrels.tsv")]
        )
        assert code == 4
        assert "data error" in capsys.readouterr().err
