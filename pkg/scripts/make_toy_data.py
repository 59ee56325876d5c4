"""Write a synthetic ambiguous-noun dataset plus a ready-to-run YAML config.

    python scripts/make_toy_data.py data/toy --noise 5
    ramt train data/toy/config.yaml --condition image_filter
"""

import argparse
from pathlib import Path

import yaml

from ramt.synthetic import build_dataset

DESK_DIMS = {"embed": 64, "hidden": 64, "dec_hidden": 64, "feature_dim": 8, "grid_rows": 4, "key_dim": 16, "region_attn_dim": 16}
DESK_TRAIN = {"batch_size": 8, "learning_rate": 0.005, "dropout": 0.0, "max_epochs": 1000, "patience": 1000,
              "max_updates": 300, "seeds": [1, 2, 3, 4, 5]}


def desk_config(root: Path, paths: dict, condition: str = "retrieved_images", m: int = 5, noise: int = 0) -> dict:
    return {
        "condition": condition,
        "data": {k: Path(paths[k]).name for k in ("train_src", "train_tgt", "dev_src", "dev_tgt", "test_src", "test_tgt")},
        "retrieval": {
            "m": m,
            "m_prime": m + noise if noise else 2 * m,
            "o": 2,
            "backend": {"kind": "fixture", "fixture_dir": "fixtures/{split}"},
            "scorer": "scores.{split}.jsonl",
            "text_store": "texts.txt",
        },
        "dims": DESK_DIMS,
        "train": DESK_TRAIN,
        "output_dir": f"runs/{condition}",
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("root", type=Path)
    ap.add_argument("--train", type=int, default=64)
    ap.add_argument("--dev", type=int, default=32)
    ap.add_argument("--test", type=int, default=32)
    ap.add_argument("--m", type=int, default=5)
    ap.add_argument("--noise", type=int, default=0, help="noise grids mixed in per sentence")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    paths = build_dataset(args.root, args.train, args.dev, args.test, m=args.m, rows=DESK_DIMS["grid_rows"],
                          feature_dim=DESK_DIMS["feature_dim"], n_noise=args.noise, seed=args.seed)
    # supplementary-text conditions retrieve from the training sources
    (args.root / "texts.txt").write_text(Path(paths["train_src"]).read_text(encoding="utf-8"), encoding="utf-8")
    cfg = desk_config(args.root, paths, m=args.m, noise=args.noise)
    (args.root / "config.yaml").write_text(yaml.safe_dump(cfg, sort_keys=False), encoding="utf-8")
    print(f"wrote {args.root}/config.yaml")


if __name__ == "__main__":
    main()
