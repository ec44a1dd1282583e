"""CLI tests: the staged pipeline, search/expand/eval output, exit codes,
and LLM replay wiring."""

import json

import pytest

from taxoindex import cli
from taxoindex.concept_index import build_prompt, request_fingerprint
from taxoindex.embeddings import SyntheticEmbeddingProvider
from taxoindex.lexical import load_corpus
from taxoindex.taxonomy import candidate_topics, load_taxonomy


def run_cli(pipeline, *args, extra_flags=()):
    argv = ["--config", str(pipeline["config"]),
            "--data-dir", str(pipeline["data_dir"]), *extra_flags, *args]
    return cli.main(argv)


class TestPipelineOutputs:
    def test_artifacts_exist(self, pipeline_dir):
        data_dir = pipeline_dir["data_dir"]
        for name in ("forward_index.jsonl", "tailored_taxonomy.jsonl",
                     "taxonomy_index.jsonl", "checkpoint.json", "checkpoint.bin",
                     "fused.bin", "predictions.jsonl", "MANIFEST.json",
                     "train_log.jsonl"):
            assert (data_dir / name).exists(), name

    def test_train_log_schema(self, pipeline_dir):
        lines = (pipeline_dir["data_dir"] / "train_log.jsonl").read_text().splitlines()
        assert len(lines) == 3  # epochs in the fixture config
        entry = json.loads(lines[0])
        assert set(entry) == {"epoch", "L_CL", "L_IL_docs", "L_IL_queries",
                              "p_at_10_topic", "p_at_10_phrase"}


class TestSearchCommand:
    def test_prints_k_rows(self, pipeline_dir, capsys):
        world = pipeline_dir["world"]
        query = next(iter(world.test_queries.values()))
        code = run_cli(pipeline_dir, "search", "--query", query, "--k", "4",
                       "--retention", "100")
        assert code == 0
        rows = capsys.readouterr().out.strip().splitlines()
        assert len(rows) == 4
        first = rows[0].split("\t")
        assert first[0] == "1" and len(first) == 6

    def test_expand_flag(self, pipeline_dir, capsys):
        code = run_cli(pipeline_dir, "search", "--query", "arbitrary words",
                       "--k", "2", "--expand")
        assert code == 0
        assert len(capsys.readouterr().out.strip().splitlines()) == 2

    def test_expand_command(self, pipeline_dir, capsys):
        code = run_cli(pipeline_dir, "expand", "--query", "some unseen text")
        assert code == 0
        out = capsys.readouterr().out.strip()
        assert out.startswith("some unseen text; ")


class TestEvalCommand:
    def test_eval_writes_reports(self, pipeline_copy, capsys):
        code = run_cli(pipeline_copy, "eval", "--retention", "100")
        assert code == 0
        out = capsys.readouterr().out
        assert "N@5" in out and "R@100" in out
        assert (pipeline_copy["data_dir"] / "run_fused.tsv").exists()
        report = json.loads(
            (pipeline_copy["data_dir"] / "report_fused.json").read_text())
        assert "N@5" in report["metrics"]

    def test_backbone_baseline(self, pipeline_copy, capsys):
        code = run_cli(pipeline_copy, "eval", "--backbone")
        assert code == 0
        assert (pipeline_copy["data_dir"] / "run_backbone.tsv").exists()


class TestExitCodes:
    def test_unknown_flag_exits_2(self):
        with pytest.raises(SystemExit) as excinfo:
            cli.main(["search", "--nonsense"])
        assert excinfo.value.code == 2

    def test_missing_subcommand_exits_2(self):
        with pytest.raises(SystemExit) as excinfo:
            cli.main([])
        assert excinfo.value.code == 2

    def test_runtime_error_exits_1(self, tmp_path, capsys):
        code = cli.main(["--data-dir", str(tmp_path / "nowhere"), "ingest"])
        assert code == 1
        assert "error" in capsys.readouterr().err

    def test_json_errors(self, tmp_path, capsys):
        code = cli.main(["--data-dir", str(tmp_path / "nowhere"), "--json", "ingest"])
        assert code == 1
        payload = json.loads(capsys.readouterr().err.strip())
        assert "error" in payload and "message" in payload


class TestLlmReplayBuild:
    def test_build_index_with_replay_fixtures(self, pipeline_copy, capsys):
        data_dir = pipeline_copy["data_dir"]
        corpus = load_corpus(data_dir / "corpus.jsonl")
        tax = load_taxonomy(data_dir / "taxonomy.jsonl")
        provider = SyntheticEmbeddingProvider(dim=24, seed=5)
        entries = []
        for doc in corpus:
            emb = provider.vector(f"doc:{doc.id}", text=doc.body_text)
            cand = candidate_topics(emb, tax, provider, doc_id=doc.id)
            ordered = sorted(cand.candidates, key=lambda n: (-cand.sims[n], n))
            names = [tax.name(n) for n in ordered]
            prompt = build_prompt(doc.body_text, names)
            entries.append({"fingerprint": request_fingerprint(prompt, "", 0.2),
                            "content": names[0]})
        fixtures = data_dir / "fixtures.jsonl"
        fixtures.write_text("\n".join(json.dumps(e) for e in entries) + "\n")
        code = run_cli(pipeline_copy, "build-index", "--llm-mode", "replay",
                       "--fixtures", str(fixtures))
        assert code == 0
        assert "indexed" in capsys.readouterr().out

    def test_replay_without_fixture_file_fails(self, pipeline_copy, capsys):
        code = run_cli(pipeline_copy, "build-index", "--llm-mode", "replay",
                       "--fixtures", str(pipeline_copy["data_dir"] / "missing.jsonl"))
        assert code == 1


class TestMinePhrases:
    def test_mine_writes_catalog(self, pipeline_copy, capsys):
        code = run_cli(pipeline_copy, "mine-phrases", "--min-freq", "3",
                       "--max-len", "2")
        assert code == 0
        assert "mined" in capsys.readouterr().out
