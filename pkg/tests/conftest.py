"""Shared fixtures: a tiny synthetic world pushed through the whole CLI
pipeline once per session."""

import shutil

import pytest

from taxoindex import cli
from taxoindex.synthetic import SyntheticSpec, generate_world, write_world

TINY_SPEC = SyntheticSpec(num_branches=2, leaves_per_branch=2, docs_per_topic=5,
                          train_queries_per_topic=2, test_queries_per_topic=1,
                          embed_dim=24, seed=5)

CONFIG_TOML = """
[embeddings]
mode = "synthetic"
dim = 24
seed = 5

[train]
learning_rate = 5e-3
batch_size = 16
epochs = 3
mined_negatives = 5
negatives_per_step = 2
warmup_max_epochs = 40
warmup_tolerance = 1e-4
seed = 5

[retrieval]
retention_percent = 50
top_k = 5

[service]
cors_origins = ["http://localhost:5173"]
"""


@pytest.fixture(scope="session")
def pipeline_dir(tmp_path_factory):
    """Data directory with every pipeline stage already run."""
    base = tmp_path_factory.mktemp("pipeline")
    data_dir = base / "data"
    world = generate_world(TINY_SPEC)
    write_world(world, data_dir)
    config_path = base / "config.toml"
    config_path.write_text(CONFIG_TOML)
    common = ["--config", str(config_path), "--data-dir", str(data_dir)]
    for stage in (["ingest"], ["build-index"], ["warmup"], ["train"], ["encode"]):
        code = cli.main(common + stage)
        assert code == 0, f"pipeline stage {stage[0]} failed"
    return {"data_dir": data_dir, "config": config_path, "world": world}


@pytest.fixture()
def pipeline_copy(pipeline_dir, tmp_path):
    """A throwaway copy of the finished pipeline directory."""
    dest = tmp_path / "data"
    shutil.copytree(pipeline_dir["data_dir"], dest)
    return {"data_dir": dest, "config": pipeline_dir["config"]}
