"""Informative images vs text only on the synthetic corpus, five seeds each.

Prints per-seed dev BLEU for both conditions and the comparison table.
"""

import argparse
import sys
import tempfile
from pathlib import Path

from ramt.config import parse_config
from ramt.experiment import comparison_table, run_experiment

sys.path.insert(0, str(Path(__file__).parent))
from make_toy_data import main as make_data  # noqa: E402


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--root", type=Path, default=None, help="dataset directory (default: a temp dir)")
    ap.add_argument("--conditions", default="text_only,retrieved_images")
    args = ap.parse_args(argv)
    root = args.root or Path(tempfile.mkdtemp(prefix="ramt_overfit_"))
    make_data([str(root)])
    manifests = []
    for condition in args.conditions.split(","):
        cfg = parse_config(root / "config.yaml", {"condition": condition, "output_dir": str(root / "runs" / condition)})
        manifest, _ = run_experiment(cfg)
        for s in manifest.seeds:
            print(f"{condition}\tseed {s.seed}\tdev {100 * s.dev_bleu:.2f}\ttest {100 * s.test_bleu:.2f}")
        manifests.append(manifest)
    print(comparison_table(manifests))


if __name__ == "__main__":
    main()
