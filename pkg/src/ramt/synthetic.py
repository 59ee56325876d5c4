"""Synthetic parallel corpora whose images carry information the source text lacks.

Every source sentence contains one ambiguous noun with two possible
translations; a hidden bit picks the translation, and only the pair's
fixture images encode that bit. A text-only model can at best guess, while a
model that reads the images can translate every sentence correctly.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .filters import FixtureScorer
from .retrieval import write_feature_file

NOUNS = {
    "bat": ("fledermaus", "schlaeger"),
    "crane": ("kranich", "baukran"),
    "mouse": ("maus", "computermaus"),
    "seal": ("robbe", "siegel"),
    "bank": ("ufer", "bankhaus"),
    "glasses": ("brille", "glaeser"),
}
ADJECTIVES = {"big": "grosse", "small": "kleine", "old": "alte", "new": "neue"}
VERBS = {"moves": "bewegt sich", "rests": "ruht", "appears": "erscheint", "waits": "wartet"}


@dataclass
class SyntheticSplit:
    sources: list[str]
    targets: list[str]
    bits: list[int]
    nouns: list[str]


def make_corpus(n_pairs: int, seed: int) -> SyntheticSplit:
    rng = np.random.default_rng(seed)
    nouns, adjs, verbs = sorted(NOUNS), sorted(ADJECTIVES), sorted(VERBS)
    out = SyntheticSplit([], [], [], [])
    for _ in range(n_pairs):
        noun = nouns[rng.integers(len(nouns))]
        adj = adjs[rng.integers(len(adjs))]
        verb = verbs[rng.integers(len(verbs))]
        bit = int(rng.integers(2))
        out.sources.append(f"the {adj} {noun} {verb} .")
        out.targets.append(f"die {ADJECTIVES[adj]} {NOUNS[noun][bit]} {VERBS[verb]} .")
        out.bits.append(bit)
        out.nouns.append(noun)
    return out


def prototypes(feature_dim: int, seed: int = 12345) -> np.ndarray:
    """Two unit-norm feature directions, one per hidden bit."""
    rng = np.random.default_rng(seed)
    p = rng.standard_normal((2, feature_dim))
    p[1] -= (p[1] @ p[0]) / (p[0] @ p[0]) * p[0]
    return p / np.linalg.norm(p, axis=1, keepdims=True)


def informative_grid(bit: int, rows: int, feature_dim: int, rng: np.random.Generator, noise: float = 0.1) -> np.ndarray:
    # entries of order one, like the noise grids
    base = prototypes(feature_dim)[bit] * np.sqrt(feature_dim)
    return (np.tile(base, (rows, 1)) + noise * rng.standard_normal((rows, feature_dim))).astype(np.float32)


def noise_grid(rows: int, feature_dim: int, rng: np.random.Generator) -> np.ndarray:
    return rng.standard_normal((rows, feature_dim)).astype(np.float32)


def write_split(split: SyntheticSplit, root: Path, name: str) -> tuple[Path, Path]:
    root.mkdir(parents=True, exist_ok=True)
    src, tgt = root / f"{name}.en", root / f"{name}.de"
    src.write_text("".join(s + "\n" for s in split.sources), encoding="utf-8")
    tgt.write_text("".join(t + "\n" for t in split.targets), encoding="utf-8")
    return src, tgt


def write_fixtures(
    split: SyntheticSplit,
    fixture_dir: Path,
    m: int,
    rows: int,
    feature_dim: int,
    seed: int,
    n_noise: int = 0,
) -> FixtureScorer:
    """Write ``m + n_noise`` ranked grids per pair; noise ranks are shuffled in.

    Returns a fixture scorer that ranks every informative grid above every
    noise grid.
    """
    fixture_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    table = {}
    total = m + n_noise
    for pair_id, bit in enumerate(split.bits):
        kinds = np.array([1] * m + [0] * n_noise)
        rng.shuffle(kinds)
        for rank, informative in enumerate(kinds, start=1):
            grid = informative_grid(bit, rows, feature_dim, rng) if informative else noise_grid(rows, feature_dim, rng)
            write_feature_file(grid, fixture_dir / f"{pair_id}_{rank}.mmtf")
            table[pair_id, rank - 1] = (0.9 - 0.01 * rank) if informative else (0.1 - 0.001 * rank)
        assert len(kinds) == total
    return FixtureScorer(table)


def build_dataset(
    root,
    n_train: int = 64,
    n_dev: int = 32,
    n_test: int = 32,
    m: int = 5,
    rows: int = 4,
    feature_dim: int = 8,
    n_noise: int = 0,
    seed: int = 0,
) -> dict[str, str]:
    """Write a complete synthetic dataset; returns the paths a config needs."""
    root = Path(root)
    paths: dict[str, str] = {}
    for offset, (name, n) in enumerate((("train", n_train), ("dev", n_dev), ("test", n_test))):
        split = make_corpus(n, seed * 10 + offset)
        src, tgt = write_split(split, root, name)
        paths[f"{name}_src"], paths[f"{name}_tgt"] = str(src), str(tgt)
        scorer = write_fixtures(split, root / "fixtures" / name, m, rows, feature_dim, seed * 10 + offset + 100, n_noise)
        scorer.save(root / f"scores.{name}.jsonl")
        paths[f"{name}_fixtures"] = str(root / "fixtures" / name)
        paths[f"{name}_scores"] = str(root / f"scores.{name}.jsonl")
    return paths
