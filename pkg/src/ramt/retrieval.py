"""Retrieval of visual features and supplementary texts from local, deterministic backends.

Feature grids live in ``.mmtf`` files::

    b"MMTF" | version u8 (=1) | rows u32le | cols u32le | rows*cols float32le, row-major
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import tokenize
from .querygen import SearchQuery

MAGIC = b"MMTF"
VERSION = 1
_HEADER = struct.Struct("<4sBII")
MAX_ELEMENTS = 1 << 28


class FeatureFileError(ValueError):
    pass


class BadMagicError(FeatureFileError):
    pass


class UnsupportedVersionError(FeatureFileError):
    pass


class TruncatedPayloadError(FeatureFileError):
    pass


class DimensionOverflowError(FeatureFileError):
    pass


class RetrievalError(RuntimeError):
    pass


@dataclass
class ImageFeatureGrid:
    values: np.ndarray  # (L, D_v) float32
    source_id: str = ""

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float32)
        if self.values.ndim != 2:
            raise ValueError(f"feature grid must be 2-D, got shape {self.values.shape}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def __eq__(self, other) -> bool:
        if not isinstance(other, ImageFeatureGrid):
            return NotImplemented
        return self.values.shape == other.values.shape and self.values.tobytes() == other.values.tobytes()


def encode_feature_bytes(values: np.ndarray) -> bytes:
    values = np.asarray(values, dtype=np.float32)
    if values.ndim != 2:
        raise ValueError("feature matrix must be 2-D")
    if not np.all(np.isfinite(values)):
        raise ValueError("feature matrix contains non-finite values")
    rows, cols = values.shape
    return _HEADER.pack(MAGIC, VERSION, rows, cols) + values.astype("<f4").tobytes(order="C")


def decode_feature_bytes(blob: bytes, origin: str = "<bytes>") -> np.ndarray:
    if len(blob) < _HEADER.size:
        if blob[:4] != MAGIC[: len(blob[:4])]:
            raise BadMagicError(f"{origin}: bad magic bytes {blob[:4]!r}")
        raise TruncatedPayloadError(f"{origin}: header truncated ({len(blob)} bytes)")
    magic, version, rows, cols = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise BadMagicError(f"{origin}: bad magic bytes {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise UnsupportedVersionError(f"{origin}: unsupported version {version}")
    n = rows * cols
    if n > MAX_ELEMENTS:
        raise DimensionOverflowError(f"{origin}: {rows}x{cols} exceeds {MAX_ELEMENTS} elements")
    expected = _HEADER.size + 4 * n
    if len(blob) < expected:
        raise TruncatedPayloadError(f"{origin}: payload truncated, {len(blob)} of {expected} bytes")
    if len(blob) > expected:
        raise FeatureFileError(f"{origin}: {len(blob) - expected} trailing bytes")
    return np.frombuffer(blob, dtype="<f4", count=n, offset=_HEADER.size).reshape(rows, cols).astype(np.float32)


def write_feature_file(grid: ImageFeatureGrid | np.ndarray, path) -> None:
    values = grid.values if isinstance(grid, ImageFeatureGrid) else grid
    Path(path).write_bytes(encode_feature_bytes(values))


def read_feature_file(path) -> ImageFeatureGrid:
    path = Path(path)
    return ImageFeatureGrid(decode_feature_bytes(path.read_bytes(), str(path)), source_id=path.stem)


# ---------------------------------------------------------------------------
# image backends


@dataclass
class RetrievalManifest:
    entries: dict[str, list[str]]
    store_dir: Path

    def item_path(self, item_id: str) -> Path:
        return self.store_dir / f"{item_id}.mmtf"

    def all_items(self) -> list[str]:
        return sorted(p.stem for p in self.store_dir.glob("*.mmtf"))


def load_manifest(path, store_dir=None) -> RetrievalManifest:
    path = Path(path)
    if not path.exists():
        raise RetrievalError(f"manifest not found: {path}")
    store = Path(store_dir) if store_dir is not None else path.parent
    entries: dict[str, list[str]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                term, ids = rec["term"], [str(i) for i in rec["item_ids"]]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise RetrievalError(f"{path}:{lineno}: corrupt manifest entry ({exc})") from exc
            entries.setdefault(term, []).extend(ids)
    manifest = RetrievalManifest(entries, store)
    for ids in entries.values():
        for item in ids:
            if not manifest.item_path(item).exists():
                raise RetrievalError(f"{path}: item {item!r} has no feature file in {store}")
    return manifest


def write_manifest(entries: dict[str, list[str]], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for term in sorted(entries):
            fh.write(json.dumps({"term": term, "item_ids": list(entries[term])}) + "\n")


@dataclass
class BackendConfig:
    """Which backend to use and where its data lives.

    kind: ``local_index`` | ``blank`` | ``random`` | ``fixture``
    """

    kind: str
    shape: tuple[int, int] = (196, 1024)
    manifest: str | None = None
    store_dir: str | None = None
    fixture_dir: str | None = None
    seed: int = 0


class _GridCache:
    def __init__(self):
        self._cache: dict[Path, ImageFeatureGrid] = {}

    def get(self, path: Path) -> ImageFeatureGrid:
        if path not in self._cache:
            self._cache[path] = read_feature_file(path)
        return self._cache[path]


class ImageBackend:
    kind = "base"

    def __init__(self, cfg: BackendConfig):
        self.cfg = cfg
        self.shape = tuple(cfg.shape)

    def retrieve(self, queries: Sequence[SearchQuery], count: int, pair_id: int | None = None) -> list[ImageFeatureGrid]:
        raise NotImplementedError

    def _blank(self) -> ImageFeatureGrid:
        return ImageFeatureGrid(np.zeros(self.shape, dtype=np.float32), "blank")

    def _check(self, grids: list[ImageFeatureGrid]) -> list[ImageFeatureGrid]:
        for g in grids:
            if g.shape != self.shape:
                raise RetrievalError(f"grid {g.source_id!r} has shape {g.shape}, expected {self.shape}")
        return grids


class BlankBackend(ImageBackend):
    kind = "blank"

    def retrieve(self, queries, count, pair_id=None):
        return [self._blank() for _ in range(count)]


class LocalIndexBackend(ImageBackend):
    """First manifest item per query term; queries cycle when ``count`` exceeds them."""

    kind = "local_index"

    def __init__(self, cfg: BackendConfig):
        super().__init__(cfg)
        if cfg.manifest is None:
            raise RetrievalError("local_index backend needs a manifest path")
        self.manifest = load_manifest(cfg.manifest, cfg.store_dir)
        self._grids = _GridCache()

    def retrieve(self, queries, count, pair_id=None):
        out = []
        for k in range(count):
            items = self._lookup(queries[k % len(queries)]) if queries else []
            out.append(self._grids.get(self.manifest.item_path(items[0])) if items else self._blank())
        return self._check(out)

    def _lookup(self, q: SearchQuery) -> list[str]:
        # items listed under every term, in the first term's order
        lists = [self.manifest.entries.get(t, []) for t in q.terms]
        return [i for i in lists[0] if all(i in other for other in lists[1:])]


class RandomBackend(ImageBackend):
    """Seeded draws from the whole item store; queries are ignored.

    Without a store, grids are standard-normal features from the same seeded stream.
    """

    kind = "random"

    def __init__(self, cfg: BackendConfig):
        super().__init__(cfg)
        self._grids = _GridCache()
        self.items: list[Path] = []
        if cfg.store_dir is not None:
            store = Path(cfg.store_dir)
            if not store.is_dir():
                raise RetrievalError(f"item store not found: {store}")
            self.items = sorted(store.glob("*.mmtf"))
            if not self.items:
                raise RetrievalError(f"item store {store} is empty")

    def retrieve(self, queries, count, pair_id=None):
        rng = np.random.default_rng([self.cfg.seed, 0 if pair_id is None else pair_id])
        if self.items:
            picks = rng.integers(0, len(self.items), size=count)
            return self._check([self._grids.get(self.items[i]) for i in picks])
        return [ImageFeatureGrid(rng.standard_normal(self.shape), f"random-{pair_id}-{k}") for k in range(count)]


class FixtureBackend(ImageBackend):
    """Grids stored as ``<fixture_dir>/<pair_id>_<rank>.mmtf``."""

    kind = "fixture"

    def __init__(self, cfg: BackendConfig):
        super().__init__(cfg)
        if cfg.fixture_dir is None:
            raise RetrievalError("fixture backend needs fixture_dir")
        self.root = Path(cfg.fixture_dir)
        self._grids = _GridCache()

    def retrieve(self, queries, count, pair_id=None):
        if pair_id is None:
            raise RetrievalError("fixture backend needs a pair_id")
        out = []
        for rank in range(1, count + 1):
            path = self.root / f"{pair_id}_{rank}.mmtf"
            if not path.exists():
                raise RetrievalError(f"fixture missing for pair {pair_id} rank {rank}: {path}")
            out.append(self._grids.get(path))
        return self._check(out)


BACKENDS = {cls.kind: cls for cls in (BlankBackend, LocalIndexBackend, RandomBackend, FixtureBackend)}


def make_backend(cfg: BackendConfig) -> ImageBackend:
    try:
        return BACKENDS[cfg.kind](cfg)
    except KeyError:
        raise RetrievalError(f"unknown backend {cfg.kind!r}; expected one of {sorted(BACKENDS)}") from None


def retrieve_images(
    queries: Sequence[SearchQuery],
    count: int,
    backend: ImageBackend | BackendConfig,
    pair_id: int | None = None,
) -> list[ImageFeatureGrid]:
    if count < 1:
        raise ValueError("count must be >= 1")
    if isinstance(backend, BackendConfig):
        backend = make_backend(backend)
    return backend.retrieve(list(queries), count, pair_id)


# ---------------------------------------------------------------------------
# supplementary texts


@dataclass
class SupplementaryText:
    tokens: list[str]
    source_id: str
    matched_query: SearchQuery

    @property
    def is_fallback(self) -> bool:
        return self.source_id == "fallback"


@dataclass
class TextStore:
    sentences: list[list[str]] = field(default_factory=list)

    @classmethod
    def load(cls, path) -> "TextStore":
        path = Path(path)
        if not path.exists():
            raise RetrievalError(f"text store not found: {path}")
        with open(path, encoding="utf-8") as fh:
            return cls([tokenize(line) for line in fh])

    @classmethod
    def from_lines(cls, lines: Sequence[str]) -> "TextStore":
        return cls([tokenize(line) for line in lines])


def retrieve_supplementary_texts(
    queries: Sequence[SearchQuery],
    count: int,
    store: TextStore,
) -> list[SupplementaryText]:
    """First stored sentence containing every query term; the query terms themselves otherwise."""
    if count < 1:
        raise ValueError("count must be >= 1")
    if not queries:
        raise ValueError("need at least one query")
    sets = [set(s) for s in store.sentences]
    out = []
    for k in range(count):
        q = queries[k % len(queries)]
        hit = next((i for i, s in enumerate(sets) if s.issuperset(q.terms)), None)
        if hit is None:
            out.append(SupplementaryText(list(q.terms), "fallback", q))
        else:
            out.append(SupplementaryText(list(store.sentences[hit]), f"line-{hit}", q))
    return out


# ---------------------------------------------------------------------------
# regions


@dataclass
class RegionFeatureSet:
    region_ids: list[str]
    vectors: np.ndarray  # (O, D_v) float32
    parent_image: str = ""

    @property
    def regions(self) -> list[tuple[str, np.ndarray]]:
        return list(zip(self.region_ids, self.vectors))

    def __len__(self) -> int:
        return len(self.region_ids)


class RegionProvider:
    def regions(self, grid: ImageFeatureGrid, o: int) -> np.ndarray:
        raise NotImplementedError


class GridSliceProvider(RegionProvider):
    """Region k is row k of the image's feature grid."""

    def regions(self, grid, o):
        if grid.shape[0] < o:
            raise RetrievalError(f"grid {grid.source_id!r} has {grid.shape[0]} rows, cannot provide {o} regions")
        return grid.values[:o]


class FixtureRegionProvider(RegionProvider):
    """Precomputed region matrices stored as ``<root>/<source_id>.regions.mmtf``."""

    def __init__(self, root):
        self.root = Path(root)

    def regions(self, grid, o):
        path = self.root / f"{grid.source_id}.regions.mmtf"
        if not path.exists():
            raise RetrievalError(f"region fixture missing: {path}")
        values = read_feature_file(path).values
        if values.shape[0] < o:
            raise RetrievalError(f"{path}: {values.shape[0]} regions stored, {o} requested")
        return values[:o]


def extract_regions(grid: ImageFeatureGrid, o: int, provider: RegionProvider | None = None) -> RegionFeatureSet:
    if o < 1:
        raise ValueError("o must be >= 1")
    provider = provider or GridSliceProvider()
    vectors = np.asarray(provider.regions(grid, o), dtype=np.float32)
    if vectors.shape[0] != o:
        raise RetrievalError(f"region provider returned {vectors.shape[0]} regions, expected {o}")
    return RegionFeatureSet([f"{grid.source_id}#{k}" for k in range(o)], vectors, grid.source_id)
