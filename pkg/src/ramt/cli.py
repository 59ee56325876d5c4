"""Command line: ``ramt {train,evaluate,stats,gradcheck,table}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import yaml

from .config import ConfigError, parse_config
from .corpus import tokenize
from .evaluation import bleu_corpus, load_labels, noise_statistics, read_results_tsv, render_table
from .experiment import RunManifest, StageError, comparison_table, run_experiment

log = logging.getLogger("ramt")


def _overrides(args) -> dict:
    out = {}
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        out[key] = yaml.safe_load(value)
    if args.condition:
        out["condition"] = args.condition
    if args.output_dir:
        out["output_dir"] = args.output_dir
    if args.seeds:
        out["train.seeds"] = [int(s) for s in args.seeds.split(",")]
    return out


def cmd_train(args) -> int:
    cfg = parse_config(args.config, _overrides(args))
    manifest, table = run_experiment(cfg)
    for s in manifest.seeds:
        print(f"{cfg.condition}\tseed {s.seed}\ttest BLEU {100 * s.test_bleu:.2f}\tdev BLEU {100 * s.dev_bleu:.2f}")
    print(table)
    print(f"manifest: {Path(cfg.output_dir) / 'manifest.json'}")
    return 0


def _read_tokenized(path) -> list[list[str]]:
    with open(path, encoding="utf-8") as fh:
        return [tokenize(line) for line in fh]


def cmd_evaluate(args) -> int:
    hyps, refs = _read_tokenized(args.hyp), _read_tokenized(args.ref)
    report = bleu_corpus(hyps, refs, smooth=args.smooth)
    print(f"BLEU {100 * report.score:.2f}")
    print("precisions " + " ".join(f"{p:.4f}" for p in report.precisions))
    print(f"BP {report.brevity_penalty:.4f} hyp_len {report.hyp_length} ref_len {report.ref_length}")
    return 0


def cmd_stats(args) -> int:
    keywords, images = load_labels(args.labels)
    stats = noise_statistics(keywords, images)
    print(f"sentences\t{stats.n_sentences}")
    print(f"half_or_more_nonentity_keywords\t{stats.n_half_or_more_nonentity_keywords}")
    print(f"half_or_more_noise_images\t{stats.n_half_or_more_noise_images}")
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import check_pipeline

    report = check_pipeline(seed=args.seed)
    worst = 0.0
    for name, err in report.items():
        worst = max(worst, err)
        print(f"{name}\t{err:.3e}")
    ok = worst < args.tolerance
    print(f"max relative error {worst:.3e} ({'ok' if ok else 'FAIL'}, tolerance {args.tolerance:g})")
    return 0 if ok else 1


def cmd_table(args) -> int:
    manifests, reports = [], []
    for path in args.runs:
        p = Path(path)
        if p.is_dir():
            p = p / "manifest.json"
        if p.suffix == ".tsv":
            reports.extend(read_results_tsv(p))
        else:
            manifests.append(RunManifest.load(p))
    if manifests:
        print(comparison_table(manifests))
    if reports:
        print(render_table(reports, scale=100))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ramt", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train and test one condition over all seeds")
    p.add_argument("config")
    p.add_argument("--condition")
    p.add_argument("--output-dir")
    p.add_argument("--seeds", help="comma-separated, e.g. 1,2,3")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a dotted config key, e.g. train.max_epochs=3")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="corpus BLEU of a hypothesis file against a reference file")
    p.add_argument("hyp")
    p.add_argument("ref")
    p.add_argument("--smooth", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("stats", help="noise statistics from a JSONL label file")
    p.add_argument("labels")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full tiny pipeline")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("table", help="render a comparison table from run manifests or results TSVs")
    p.add_argument("runs", nargs="+")
    p.set_defaults(func=cmd_table)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
