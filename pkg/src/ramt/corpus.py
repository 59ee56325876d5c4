"""Parallel corpus loading, tokenization, vocabularies and batching."""

from __future__ import annotations

import random
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import torch

PAD, BOS, EOS, UNK = 0, 1, 2, 3
RESERVED = ("<pad>", "<bos>", "<eos>", "<unk>")

# Word characters may be joined by single inner punctuation marks ("u.n", "to-go");
# any other punctuation character becomes a token of its own.
_TOKEN_RE = re.compile(r"\w+(?:[^\w\s]\w+)*|[^\w\s]")


class CorpusError(ValueError):
    pass


def tokenize(raw: str) -> list[str]:
    return _TOKEN_RE.findall(raw.lower())


@dataclass(frozen=True)
class SentencePair:
    source_tokens: list[str]
    target_tokens: list[str]
    pair_id: int


@dataclass
class CorpusSplit:
    pairs: list[SentencePair]
    name: str = "train"

    def __len__(self) -> int:
        return len(self.pairs)

    def __iter__(self) -> Iterator[SentencePair]:
        return iter(self.pairs)

    def side(self, side: str) -> list[list[str]]:
        if side == "source":
            return [p.source_tokens for p in self.pairs]
        if side == "target":
            return [p.target_tokens for p in self.pairs]
        raise ValueError(f"side must be 'source' or 'target', got {side!r}")


def _read_lines(path: Path) -> list[str]:
    data = Path(path).read_bytes()
    lines = data.split(b"\n")
    if lines and lines[-1] == b"":
        lines.pop()
    out = []
    for lineno, raw in enumerate(lines, start=1):
        try:
            out.append(raw.decode("utf-8").rstrip("\r"))
        except UnicodeDecodeError as exc:
            raise CorpusError(f"{path}: undecodable bytes on line {lineno}: {exc.reason}") from exc
    return out


def load_parallel_corpus(source_path, target_path, name: str = "train") -> CorpusSplit:
    """Read two line-aligned UTF-8 files into a split.

    Lines that tokenize to nothing on both sides are dropped; a pair that is
    empty on only one side is an error, since every kept pair needs tokens on
    both sides.
    """
    src_lines = _read_lines(source_path)
    tgt_lines = _read_lines(target_path)
    if len(src_lines) != len(tgt_lines):
        raise CorpusError(
            f"line-count mismatch: {source_path} has {len(src_lines)} lines, "
            f"{target_path} has {len(tgt_lines)} lines"
        )
    pairs = []
    for lineno, (s, t) in enumerate(zip(src_lines, tgt_lines), start=1):
        src, tgt = tokenize(s), tokenize(t)
        if not src and not tgt:
            continue
        if not src or not tgt:
            raise CorpusError(f"line {lineno}: one side is empty after tokenization")
        pairs.append(SentencePair(src, tgt, len(pairs)))
    return CorpusSplit(pairs, name)


def split_from_lists(sources: Sequence[str], targets: Sequence[str], name: str = "train") -> CorpusSplit:
    """In-memory counterpart of load_parallel_corpus."""
    if len(sources) != len(targets):
        raise CorpusError(f"line-count mismatch: {len(sources)} vs {len(targets)}")
    pairs = []
    for s, t in zip(sources, targets):
        src, tgt = tokenize(s), tokenize(t)
        if src and tgt:
            pairs.append(SentencePair(src, tgt, len(pairs)))
    return CorpusSplit(pairs, name)


@dataclass
class Vocabulary:
    token_to_id: dict[str, int] = field(default_factory=dict)
    id_to_token: dict[int, str] = field(default_factory=dict)

    def __post_init__(self):
        for i, tok in enumerate(RESERVED):
            self.token_to_id.setdefault(tok, i)
            self.id_to_token.setdefault(i, tok)

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id and self.token_to_id[token] >= len(RESERVED)

    def add(self, token: str) -> int:
        if token in self.token_to_id:
            return self.token_to_id[token]
        idx = len(self.id_to_token)
        self.token_to_id[token] = idx
        self.id_to_token[idx] = token
        return idx

    def decode(self, ids: Sequence[int], strip_special: bool = True) -> list[str]:
        out = []
        for i in ids:
            i = int(i)
            if strip_special and i in (PAD, BOS, EOS):
                continue
            out.append(self.id_to_token.get(i, RESERVED[UNK]))
        return out

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for idx in sorted(self.id_to_token):
                fh.write(f"{self.id_to_token[idx]}\t{idx}\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        vocab = cls()
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.rstrip("\n")
                if not line:
                    continue
                tok, idx = line.rsplit("\t", 1)
                vocab.token_to_id[tok] = int(idx)
                vocab.id_to_token[int(idx)] = tok
        return vocab


def build_vocabulary(split: CorpusSplit, side: str = "source", min_freq: int = 1) -> Vocabulary:
    if min_freq < 1:
        raise ValueError("min_freq must be >= 1")
    if len(split) == 0:
        raise CorpusError("cannot build a vocabulary from an empty split")
    counts = Counter(tok for sent in split.side(side) for tok in sent)
    vocab = Vocabulary()
    for tok, c in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0])):
        if c >= min_freq and tok not in vocab.token_to_id:
            vocab.add(tok)
    return vocab


def encode_tokens(tokens: Sequence[str], vocab: Vocabulary, add_bos_eos: bool = False) -> list[int]:
    ids = [vocab.token_to_id[t] if t in vocab else UNK for t in tokens]
    if add_bos_eos:
        ids = [BOS, *ids, EOS]
    return ids


def pad_batch(seqs: Sequence[Sequence[int]]) -> torch.Tensor:
    width = max(len(s) for s in seqs)
    out = torch.full((len(seqs), width), PAD, dtype=torch.long)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = torch.tensor(list(s), dtype=torch.long)
    return out


@dataclass
class Batch:
    pair_ids: list[int]
    src: torch.Tensor  # (B, N), no BOS/EOS
    tgt: torch.Tensor  # (B, T+2), BOS ... EOS

    @property
    def src_mask(self) -> torch.Tensor:
        return self.src != PAD


def batch_iterator(
    split: CorpusSplit,
    batch_size: int,
    seed: int,
    src_vocab: Vocabulary,
    tgt_vocab: Vocabulary,
    shuffle: bool = True,
) -> list[Batch]:
    """One epoch of padded batches; the order is a pure function of ``seed``."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = list(range(len(split)))
    if shuffle:
        random.Random(seed).shuffle(order)
    batches = []
    for start in range(0, len(order), batch_size):
        chunk = [split.pairs[i] for i in order[start : start + batch_size]]
        batches.append(
            Batch(
                pair_ids=[p.pair_id for p in chunk],
                src=pad_batch([encode_tokens(p.source_tokens, src_vocab) for p in chunk]),
                tgt=pad_batch([encode_tokens(p.target_tokens, tgt_vocab, True) for p in chunk]),
            )
        )
    return batches
