#!/usr/bin/env python3
"""Materialize a synthetic world as a ready-to-use data directory plus a
matching config.toml, so the CLI pipeline and the service can be driven
immediately:

    python3 scripts/make_demo_data.py --out demo
    taxoindex --config demo/config.toml build-index
    taxoindex --config demo/config.toml warmup
    taxoindex --config demo/config.toml train
    taxoindex --config demo/config.toml encode
    taxoindex --config demo/config.toml serve
"""

import argparse
from pathlib import Path

from taxoindex.synthetic import SyntheticSpec, generate_world, write_world

CONFIG_TEMPLATE = """# Demo engine configuration.
[engine]
data_dir = "{data_dir}"

[embeddings]
mode = "synthetic"
dim = {dim}
seed = {seed}

[train]
learning_rate = 5e-3
batch_size = 64
epochs = 30
mined_negatives = 20
negatives_per_step = 4
warmup_max_epochs = 600
warmup_tolerance = 1e-5
seed = {seed}

[retrieval]
retention_percent = 25
top_k = 10

[service]
host = "127.0.0.1"
port = 8300
cors_origins = ["http://localhost:5173", "http://127.0.0.1:5173"]
"""


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="demo", help="output directory")
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args()

    out = Path(args.out)
    data_dir = out / "data"
    spec = SyntheticSpec(seed=args.seed)
    world = generate_world(spec)
    write_world(world, data_dir)
    config_path = out / "config.toml"
    config_path.write_text(CONFIG_TEMPLATE.format(
        data_dir=str(data_dir.resolve()), dim=spec.embed_dim, seed=args.seed))
    print(f"wrote {len(world.corpus)} documents, {len(world.taxonomy)} taxonomy "
          f"nodes, {len(world.train_queries)} train / {len(world.test_queries)} "
          f"test queries under {data_dir}")
    print(f"config: {config_path}")


if __name__ == "__main__":
    main()
