"""Condition wiring and the multi-seed experiment runner."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .config import ExperimentConfig, config_from_dict
from .corpus import CorpusSplit, Vocabulary, build_vocabulary, load_parallel_corpus
from .encoders import FixtureTextProvider, HashEmbeddingProvider, stack_grids, supplementary_grids
from .evaluation import RunReport, bleu_corpus, macro_average_report, render_table, write_results_tsv
from .filters import CosineScorer, FixtureScorer, filter_images
from .model import VISUAL_MODES
from .querygen import SearchQuery, compute_idf, dump_queries, load_stopwords, queries_for_split
from .retrieval import (
    BackendConfig,
    FixtureRegionProvider,
    GridSliceProvider,
    TextStore,
    extract_regions,
    make_backend,
    retrieve_supplementary_texts,
)
from .training import TrainedModel, VisualStore, save_model, train_model, translate_split

log = logging.getLogger(__name__)


class StageError(RuntimeError):
    def __init__(self, stage: str, exc: BaseException):
        super().__init__(f"[{stage}] {type(exc).__name__}: {exc}")
        self.stage = stage


class _Stage:
    def __init__(self, name: str, timings: dict[str, float]):
        self.name, self.timings = name, timings

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        self.timings[self.name] = self.timings.get(self.name, 0.0) + time.perf_counter() - self.t0
        if exc is not None and not isinstance(exc, StageError):
            raise StageError(self.name, exc) from exc
        return False


def _per_split(path: str | None, split: str) -> str | None:
    return None if path is None else path.replace("{split}", split)


def image_backend_for(cfg: ExperimentConfig, split: str = "train") -> BackendConfig:
    """Backend for one split; ``{split}`` in fixture/manifest paths expands to the split name."""
    b = cfg.retrieval.backend
    shape = (cfg.dims.grid_rows, cfg.dims.feature_dim)
    if cfg.condition == "blank_images":
        return BackendConfig("blank", shape)
    if cfg.condition == "random_images":
        return BackendConfig("random", shape, store_dir=b.store_dir, seed=b.seed)
    return BackendConfig(b.kind, shape, _per_split(b.manifest, split), b.store_dir, _per_split(b.fixture_dir, split), b.seed)


def _scorer(cfg: ExperimentConfig, split: str):
    choice = cfg.retrieval.scorer
    return CosineScorer() if choice == "cosine" else FixtureScorer.load(_per_split(choice, split))


def prepare_visual(
    cfg: ExperimentConfig,
    split: CorpusSplit,
    queries: dict[int, list[SearchQuery]],
) -> VisualStore | None:
    """Retrieve, filter and stack the visual inputs every pair of ``split`` needs.

    Image filtering happens here, once per run: the scorer stands in for a
    frozen pretrained text/image model, so its choice does not depend on
    training. Region filtering depends on the encoder and runs inside the model.
    """
    mode = VISUAL_MODES[cfg.condition]
    if mode == "none":
        return None
    r = cfg.retrieval
    L, D = cfg.dims.grid_rows, cfg.dims.feature_dim
    grids = regions = texts = None
    if mode in ("grids", "regions", "grids+texts"):
        backend = make_backend(image_backend_for(cfg, split.name))
        filtering = cfg.condition in ("image_filter", "both_filters")
        scorer = _scorer(cfg, split.name) if filtering else None
        hasher = HashEmbeddingProvider(D) if filtering else None
        region_provider = GridSliceProvider() if r.region_provider == "grid_slices" else FixtureRegionProvider(r.region_provider)
        per_pair = []
        for p in split.pairs:
            q = queries[p.pair_id]
            if filtering:
                cands = backend.retrieve(q, r.m_prime, p.pair_id)
                text_vec = hasher.features(p.source_tokens).mean(0)
                items = filter_images(cands, text_vec, r.m, scorer, pair_id=p.pair_id)
            else:
                items = backend.retrieve(q, r.m, p.pair_id)
            if mode == "regions":
                per_pair.append(np.concatenate([extract_regions(g, r.o, region_provider).vectors for g in items]))
            else:
                per_pair.append(stack_grids(items).numpy())
        stacked = torch.as_tensor(np.stack(per_pair), dtype=torch.float64)
        if mode == "regions":
            regions = stacked
        else:
            grids = stacked
    if mode in ("texts", "grids+texts"):
        store = TextStore.load(r.text_store)
        provider = HashEmbeddingProvider(D) if r.text_provider == "hash" else FixtureTextProvider(r.text_provider)
        texts = torch.stack(
            [supplementary_grids(retrieve_supplementary_texts(queries[p.pair_id], r.m, store), provider, L) for p in split.pairs]
        )
    return VisualStore(grids, regions, texts, r.o)


@dataclass
class PreparedData:
    train: CorpusSplit
    dev: CorpusSplit
    test: CorpusSplit
    src_vocab: Vocabulary
    tgt_vocab: Vocabulary
    queries: dict[str, dict[int, list[SearchQuery]]]
    visual: dict[str, VisualStore | None]


def prepare_data(cfg: ExperimentConfig, timings: dict[str, float] | None = None, splits: dict[str, CorpusSplit] | None = None) -> PreparedData:
    timings = {} if timings is None else timings
    d = cfg.data
    with _Stage("load", timings):
        if splits is None:
            splits = {
                name: load_parallel_corpus(getattr(d, f"{name}_src"), getattr(d, f"{name}_tgt"), name)
                for name in ("train", "dev", "test")
            }
        src_vocab = build_vocabulary(splits["train"], "source", d.min_freq)
        tgt_vocab = build_vocabulary(splits["train"], "target", d.min_freq)
    with _Stage("querygen", timings):
        stop = load_stopwords(d.stopwords) if d.stopwords else None
        idf = compute_idf(splits["train"])
        queries = {name: queries_for_split(s, idf, cfg.retrieval.m, stop) for name, s in splits.items()}
    with _Stage("retrieval", timings):
        visual = {name: prepare_visual(cfg, s, queries[name]) for name, s in splits.items()}
    return PreparedData(splits["train"], splits["dev"], splits["test"], src_vocab, tgt_vocab, queries, visual)


@dataclass
class SeedResult:
    seed: int
    test_bleu: float
    dev_bleu: float
    best_epoch: int
    epochs_run: int
    checkpoint: str | None = None
    hypotheses: str | None = None


@dataclass
class RunManifest:
    config: dict
    condition: str
    seeds: list[SeedResult] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=dict)

    @property
    def report(self) -> RunReport:
        return macro_average_report([s.test_bleu for s in self.seeds], self.condition, [s.seed for s in self.seeds])

    def to_json(self) -> dict:
        return {
            "config": self.config,
            "condition": self.condition,
            "seeds": [vars(s) for s in self.seeds],
            "timings": self.timings,
            "macro_average": self.report.macro_average,
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "RunManifest":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(raw["config"], raw["condition"], [SeedResult(**s) for s in raw["seeds"]], raw.get("timings", {}))

    @property
    def experiment_config(self) -> ExperimentConfig:
        return config_from_dict(self.config)


def run_experiment(
    cfg: ExperimentConfig,
    seeds: list[int] | None = None,
    splits: dict[str, CorpusSplit] | None = None,
    write: bool = True,
) -> tuple[RunManifest, str]:
    """Train and test one condition over several seeds; returns the manifest and a rendered table."""
    seeds = list(cfg.train.seeds if seeds is None else seeds)
    out = Path(cfg.output_dir)
    if write:
        out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(cfg.to_dict(), cfg.condition)
    data = prepare_data(cfg, manifest.timings, splits)
    if write:
        data.src_vocab.save(out / "vocab.src.tsv")
        data.tgt_vocab.save(out / "vocab.tgt.tsv")
        for name, qs in data.queries.items():
            dump_queries(qs, out / f"queries.{name}.jsonl")
    for seed in seeds:
        result = run_seed(cfg, data, seed, manifest.timings, out if write else None)
        manifest.seeds.append(result)
        log.info("%s seed %d: test BLEU %.4f (dev %.4f)", cfg.condition, seed, result.test_bleu, result.dev_bleu)
    table = render_table([manifest.report], scale=100)
    if write:
        manifest.save(out / "manifest.json")
        write_results_tsv([manifest.report], out / "results.tsv")
        (out / "table.md").write_text(table + "\n", encoding="utf-8")
    return manifest, table


def run_seed(cfg: ExperimentConfig, data: PreparedData, seed: int, timings: dict[str, float], out: Path | None) -> SeedResult:
    tag = f"seed{seed}"
    with _Stage("train", timings):
        trained: TrainedModel = train_model(
            data.train,
            data.dev,
            cfg.condition,
            cfg.train,
            seed,
            src_vocab=data.src_vocab,
            tgt_vocab=data.tgt_vocab,
            dims=cfg.dims,
            train_visual=data.visual["train"],
            dev_visual=data.visual["dev"],
            log_path=None if out is None else out / f"train.{tag}.tsv",
        )
    with _Stage("evaluate", timings):
        test_visual = data.visual["test"]
        if test_visual is not None:
            test_visual = test_visual.to(cfg.train.torch_dtype)
        hyps = translate_split(trained.model, data.test, data.src_vocab, data.tgt_vocab, test_visual)
        bleu = bleu_corpus(hyps, [p.target_tokens for p in data.test.pairs]).score
    ckpt = hyp_path = None
    if out is not None:
        ckpt = str(out / f"model.{tag}.mmtc")
        save_model(trained.model, ckpt)
        hyp_path = str(out / f"test.{tag}.hyp")
        Path(hyp_path).write_text("".join(" ".join(h) + "\n" for h in hyps), encoding="utf-8")
    return SeedResult(seed, bleu, trained.best_dev_bleu, trained.best_epoch, trained.epochs_run, ckpt, hyp_path)


def comparison_table(manifests: list[RunManifest]) -> str:
    """Re-render a multi-condition table from saved manifests, without recomputation."""
    return render_table([m.report for m in manifests], scale=100)
