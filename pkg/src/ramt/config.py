"""Experiment configuration: YAML schema, defaults and validation.

Schema (every key optional except ``condition``)::

    condition: retrieved_images        # see CONDITIONS
    data:
      train_src: path/train.en
      train_tgt: path/train.de
      dev_src / dev_tgt / test_src / test_tgt: ...
      min_freq: 1
      stopwords: path                  # default: bundled English list
    retrieval:
      m: 5                             # queries / items per sentence
      m_prime: 10                      # candidates before the image filter
      o: 128                           # regions per image and regions kept
      backend: {kind: local_index, manifest: ..., store_dir: ..., fixture_dir: ..., seed: 0}
      scorer: cosine                   # or a JSONL fixture score table
      # "{split}" inside manifest, fixture_dir or scorer paths expands to train/dev/test
      region_provider: grid_slices     # or a directory of region fixtures
      text_store: path                 # one sentence per line
      text_provider: hash              # or a directory of text feature fixtures
    dims: {embed: 128, hidden: 256, dec_hidden: 256, feature_dim: 1024,
           grid_rows: 196, key_dim: 256, region_attn_dim: 256}
    train: {batch_size: 32, learning_rate: 0.001, dropout: 0.3, max_epochs: 15,
            patience: 3, seeds: [1, 2, 3, 4, 5], ...}
    output_dir: runs/example
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .model import VISUAL_MODES, ModelDims
from .retrieval import BACKENDS, BackendConfig
from .training import TrainConfig

CONDITIONS = tuple(VISUAL_MODES)


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    train_src: str | None = None
    train_tgt: str | None = None
    dev_src: str | None = None
    dev_tgt: str | None = None
    test_src: str | None = None
    test_tgt: str | None = None
    min_freq: int = 1
    stopwords: str | None = None


@dataclass
class RetrievalConfig:
    m: int = 5
    m_prime: int = 10
    o: int = 128
    backend: BackendConfig = field(default_factory=lambda: BackendConfig("local_index"))
    scorer: str = "cosine"
    region_provider: str = "grid_slices"
    text_store: str | None = None
    text_provider: str = "hash"


@dataclass
class ExperimentConfig:
    condition: str
    data: DataConfig = field(default_factory=DataConfig)
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    dims: ModelDims = field(default_factory=ModelDims)
    train: TrainConfig = field(default_factory=TrainConfig)
    output_dir: str = "runs/default"

    def validate(self) -> "ExperimentConfig":
        if self.condition not in CONDITIONS:
            raise ConfigError(f"condition: unknown value {self.condition!r}; expected one of {', '.join(CONDITIONS)}")
        r = self.retrieval
        if r.backend.kind not in BACKENDS:
            raise ConfigError(f"retrieval.backend.kind: unknown backend {r.backend.kind!r}; expected one of {', '.join(sorted(BACKENDS))}")
        for key in ("m", "m_prime", "o"):
            if getattr(r, key) < 1:
                raise ConfigError(f"retrieval.{key}: must be >= 1")
        if self.condition in ("image_filter", "both_filters") and r.m_prime < r.m:
            raise ConfigError(f"retrieval.m_prime: {r.m_prime} < m={r.m}; the image filter needs m_prime >= m")
        if VISUAL_MODES[self.condition] == "regions" and r.region_provider == "grid_slices" and r.o > self.dims.grid_rows:
            raise ConfigError(f"retrieval.o: {r.o} regions exceed grid_rows={self.dims.grid_rows} for grid_slices")
        if VISUAL_MODES[self.condition] in ("texts", "grids+texts") and r.text_store is None:
            raise ConfigError("retrieval.text_store: required for supplementary-text conditions")
        return self

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["retrieval"]["backend"]["shape"] = list(self.retrieval.backend.shape)
        return d


def _build(cls, raw: Any, prefix: str):
    if raw is None:
        return cls() if cls is not BackendConfig else cls("local_index")
    if not isinstance(raw, dict):
        raise ConfigError(f"{prefix}: expected a mapping, got {type(raw).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in raw.items():
        if key not in fields:
            raise ConfigError(f"{prefix}.{key}: unknown key" if prefix else f"{key}: unknown key")
        name = f"{prefix}.{key}" if prefix else key
        nested = _NESTED.get((cls, key))
        if nested is not None:
            kwargs[key] = _build(nested, value, name)
        else:
            kwargs[key] = _check_type(fields[key], value, name)
    if cls is BackendConfig:
        kwargs.setdefault("kind", "local_index")
        if "shape" in kwargs:
            kwargs["shape"] = tuple(kwargs["shape"])
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{prefix or 'config'}: {exc}") from exc


_SCALARS = {"int": int, "float": (int, float), "str": str, "bool": bool}


def _check_type(f: dataclasses.Field, value: Any, name: str) -> Any:
    ann = str(f.type)
    if value is None:
        if "None" in ann:
            return None
        raise ConfigError(f"{name}: must not be null")
    base = ann.split("|")[0].strip()
    if base.startswith("list"):
        if not isinstance(value, list) or not all(isinstance(v, int) and not isinstance(v, bool) for v in value):
            raise ConfigError(f"{name}: expected a list of integers, got {value!r}")
        return value
    if base.startswith("tuple"):
        if not isinstance(value, (list, tuple)) or len(value) != 2:
            raise ConfigError(f"{name}: expected two integers, got {value!r}")
        return tuple(int(v) for v in value)
    expected = _SCALARS.get(base)
    if expected is not None:
        if isinstance(value, bool) and base != "bool":
            raise ConfigError(f"{name}: expected {base}, got {value!r}")
        if not isinstance(value, expected):
            raise ConfigError(f"{name}: expected {base}, got {type(value).__name__} {value!r}")
        return float(value) if base == "float" else value
    return value


_NESTED = {
    (ExperimentConfig, "data"): DataConfig,
    (ExperimentConfig, "retrieval"): RetrievalConfig,
    (ExperimentConfig, "dims"): ModelDims,
    (ExperimentConfig, "train"): TrainConfig,
    (RetrievalConfig, "backend"): BackendConfig,
}


def config_from_dict(raw: dict[str, Any] | None, base_dir: Path | None = None) -> ExperimentConfig:
    raw = dict(raw or {})
    if not raw.get("condition"):
        raise ConfigError("condition missing")
    cfg = _build(ExperimentConfig, raw, "")
    if base_dir is not None:
        _resolve_paths(cfg, base_dir)
    return cfg.validate()


def _resolve_paths(cfg: ExperimentConfig, base: Path) -> None:
    def fix(p):
        return p if p is None or Path(p).is_absolute() else str(base / p)

    d = cfg.data
    for key in ("train_src", "train_tgt", "dev_src", "dev_tgt", "test_src", "test_tgt", "stopwords"):
        setattr(d, key, fix(getattr(d, key)))
    r = cfg.retrieval
    r.text_store = fix(r.text_store)
    for key in ("scorer", "region_provider", "text_provider"):
        value = getattr(r, key)
        if value not in ("cosine", "grid_slices", "hash"):
            setattr(r, key, fix(value))
    b = r.backend
    b.manifest, b.store_dir, b.fixture_dir = fix(b.manifest), fix(b.store_dir), fix(b.fixture_dir)


def load_raw(path) -> dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    if raw is not None and not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return raw or {}


def parse_config(path, overrides: dict[str, Any] | None = None) -> ExperimentConfig:
    """Load a YAML config; dotted ``overrides`` (e.g. ``{"train.max_epochs": 3}``) win over the file."""
    raw = load_raw(path)
    for dotted, value in (overrides or {}).items():
        set_dotted(raw, dotted, value)
    return config_from_dict(raw, Path(path).parent)


def set_dotted(raw: dict[str, Any], dotted: str, value: Any) -> None:
    node = raw
    *parents, leaf = dotted.split(".")
    for key in parents:
        node = node.setdefault(key, {})
        if not isinstance(node, dict):
            raise ConfigError(f"{dotted}: {key} is not a mapping")
    node[leaf] = value
