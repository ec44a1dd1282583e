"""Persistence round-trips and build-hash integrity checks."""

import json

import numpy as np
import pytest

from taxoindex.artifacts import (
    ArtifactError,
    ProviderConfig,
    load_engine,
    load_fused,
    load_predictions,
    save_fused,
    save_predictions,
    update_manifest,
    verify_manifest,
)


class TestManifest:
    def test_update_and_verify(self, tmp_path):
        (tmp_path / "a.txt").write_text("alpha")
        (tmp_path / "b.txt").write_text("beta")
        build_hash = update_manifest(tmp_path, ["a.txt", "b.txt"])
        assert len(build_hash) == 64
        manifest = verify_manifest(tmp_path, ["a.txt", "b.txt"])
        assert manifest["build_hash"] == build_hash

    def test_tampered_file_rejected(self, tmp_path):
        (tmp_path / "a.txt").write_text("alpha")
        update_manifest(tmp_path, ["a.txt"])
        (tmp_path / "a.txt").write_text("tampered")
        with pytest.raises(ArtifactError, match="mixed builds"):
            verify_manifest(tmp_path, ["a.txt"])

    def test_unstamped_file_rejected(self, tmp_path):
        (tmp_path / "a.txt").write_text("alpha")
        with pytest.raises(ArtifactError, match="not stamped"):
            verify_manifest(tmp_path, ["a.txt"])

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(ArtifactError, match="missing"):
            verify_manifest(tmp_path, ["ghost.txt"])

    def test_build_hash_changes_with_content(self, tmp_path):
        (tmp_path / "a.txt").write_text("one")
        h1 = update_manifest(tmp_path, ["a.txt"])
        (tmp_path / "a.txt").write_text("two")
        h2 = update_manifest(tmp_path, ["a.txt"])
        assert h1 != h2


class TestPredictionRoundTrip:
    def test_save_load(self, tmp_path):
        predictions = {"d1": [(3, 0.5), (0, 0.25)], "d2": [(1, 1.0)]}
        path = tmp_path / "predictions.jsonl"
        save_predictions(predictions, path)
        assert load_predictions(path) == predictions

    def test_bad_record(self, tmp_path):
        path = tmp_path / "predictions.jsonl"
        path.write_text('{"doc_id": "d1"}\n')
        with pytest.raises(ArtifactError):
            load_predictions(path)


class TestFusedRoundTrip:
    def test_save_load(self, tmp_path):
        rng = np.random.default_rng(0)
        fused = {"d1": rng.standard_normal(8).astype(np.float32).astype(np.float64),
                 "d2": rng.standard_normal(8).astype(np.float32).astype(np.float64)}
        path = tmp_path / "fused.bin"
        save_fused(fused, 8, path)
        loaded = load_fused(path)
        assert set(loaded) == {"d1", "d2"}
        for key, vec in fused.items():
            assert np.array_equal(loaded[key], vec)


class TestEngineIntegrity:
    PROVIDER = ProviderConfig(mode="synthetic", dim=24, seed=5)

    def test_engine_loads_and_searches(self, pipeline_copy):
        engine = load_engine(pipeline_copy["data_dir"], self.PROVIDER)
        assert len(engine.fused) == len(engine.corpus)

    def test_swapped_artifact_rejected(self, pipeline_copy):
        data_dir = pipeline_copy["data_dir"]
        # Simulate grabbing a predictions file from another build.
        path = data_dir / "predictions.jsonl"
        lines = path.read_text().splitlines()
        first = json.loads(lines[0])
        first["topic_probs_topk"] = first["topic_probs_topk"][:1]
        path.write_text("\n".join([json.dumps(first)] + lines[1:]) + "\n")
        with pytest.raises(ArtifactError, match="mixed builds"):
            load_engine(data_dir, self.PROVIDER)

    def test_checkpoint_from_other_index_rejected(self, pipeline_copy):
        data_dir = pipeline_copy["data_dir"]
        # Rebuild the index files so their hashes change, restamp the
        # manifest (so file-level checks pass), and leave the stale
        # checkpoint in place: its recorded index hash no longer matches.
        index_path = data_dir / "forward_index.jsonl"
        lines = index_path.read_text().splitlines()
        record = json.loads(lines[0])
        record["phrases"] = record["phrases"][:1]
        index_path.write_text("\n".join([json.dumps(record)] + lines[1:]) + "\n")
        update_manifest(data_dir, ["forward_index.jsonl"])
        with pytest.raises(ArtifactError, match="different index build"):
            load_engine(data_dir, self.PROVIDER)

    def test_provider_dim_mismatch_rejected(self, pipeline_copy):
        with pytest.raises(ArtifactError, match="dimension"):
            load_engine(pipeline_copy["data_dir"],
                        ProviderConfig(mode="synthetic", dim=16, seed=5))
