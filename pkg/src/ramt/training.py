"""Loss, Adam, early-stopped training, checkpoints and finite-difference gradient checks."""

from __future__ import annotations

import copy
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
import torch
from torch import nn

from .corpus import PAD, CorpusSplit, Vocabulary, batch_iterator, encode_tokens, pad_batch
from .evaluation import bleu_corpus
from .model import ModelDims, TranslationModel, VisualInputs
from .retrieval import BadMagicError, FeatureFileError, TruncatedPayloadError, UnsupportedVersionError

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 32
    learning_rate: float = 0.001
    dropout: float = 0.3
    max_epochs: int = 15
    patience: int = 3
    seeds: list[int] = field(default_factory=lambda: [1, 2, 3, 4, 5])
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    init_scale: float = 0.1
    max_updates: int | None = None
    freeze_region_filter: bool = False
    dtype: str = "float64"

    def __post_init__(self):
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must be in [0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    @property
    def torch_dtype(self) -> torch.dtype:
        return {"float64": torch.float64, "float32": torch.float32}[self.dtype]


def cross_entropy_loss(probs_or_logp: torch.Tensor, gold: torch.Tensor, mask: torch.Tensor | None = None, log_space: bool = False) -> torch.Tensor:
    """Mean of -ln p(gold) over unmasked steps.

    Probabilities are clamped at 1e-12 before the log; with ``log_space`` the
    input is already log-probabilities and is floored at ln(1e-12).
    """
    if mask is None:
        mask = gold != PAD
    picked = probs_or_logp.gather(-1, gold.unsqueeze(-1)).squeeze(-1)
    if log_space:
        logp = picked.clamp_min(math.log(PROB_FLOOR))
    else:
        logp = torch.log(picked.clamp_min(PROB_FLOOR))
    m = mask.to(logp.dtype)
    return -(logp * m).sum() / m.sum().clamp_min(1)


# ---------------------------------------------------------------------------
# Adam


@dataclass
class OptimizerState:
    m: dict[str, torch.Tensor] = field(default_factory=dict)
    v: dict[str, torch.Tensor] = field(default_factory=dict)
    step: int = 0


def adam_update(
    params: Mapping[str, torch.Tensor],
    grads: Mapping[str, torch.Tensor | None],
    opt: OptimizerState,
    cfg: TrainConfig,
) -> OptimizerState:
    """One bias-corrected Adam step, applied in place. Missing gradients count as zero."""
    for name, g in grads.items():
        if g is not None and not bool(torch.isfinite(g).all()):
            raise TrainingError(f"non-finite gradient in parameter {name!r}")
    opt.step += 1
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1 - b1**opt.step
    c2 = 1 - b2**opt.step
    with torch.no_grad():
        for name, p in params.items():
            g = grads.get(name)
            if g is None:
                g = torch.zeros_like(p)
            if name not in opt.m:
                opt.m[name] = torch.zeros_like(p)
                opt.v[name] = torch.zeros_like(p)
            if g.shape != p.shape:
                raise ValueError(f"gradient shape {tuple(g.shape)} != parameter shape {tuple(p.shape)} for {name!r}")
            m = opt.m[name].mul_(b1).add_(g, alpha=1 - b1)
            v = opt.v[name].mul_(b2).addcmul_(g, g, value=1 - b2)
            p.sub_(cfg.learning_rate * (m / c1) / ((v / c2).sqrt() + cfg.epsilon))
    return opt


# ---------------------------------------------------------------------------
# early stopping


@dataclass
class EarlyStopper:
    """Tracks dev scores; 'improvement' means strictly above the best so far."""

    patience: int = 3
    max_epochs: int = 15
    best_score: float = -math.inf
    best_epoch: int = 0
    epoch: int = 0
    history: list[float] = field(default_factory=list)

    def update(self, score: float) -> bool:
        """Record one epoch's score; returns True if this epoch is the new best."""
        self.epoch += 1
        self.history.append(score)
        if score > self.best_score:
            self.best_score, self.best_epoch = score, self.epoch
            return True
        return False

    @property
    def should_stop(self) -> bool:
        return self.epoch >= self.max_epochs or self.epoch - self.best_epoch >= self.patience


# ---------------------------------------------------------------------------
# data access


class VisualStore:
    """Visual tensors for every pair of one split, indexed by pair_id."""

    def __init__(self, grids=None, regions=None, texts=None, o: int = 0):
        self.grids, self.regions, self.texts, self.o = grids, regions, texts, o

    def batch(self, pair_ids: Sequence[int]) -> VisualInputs:
        idx = torch.as_tensor(list(pair_ids), dtype=torch.long)
        pick = lambda t: None if t is None else t[idx]  # noqa: E731
        return VisualInputs(pick(self.grids), pick(self.regions), pick(self.texts), self.o)

    def to(self, dtype: torch.dtype) -> "VisualStore":
        cast = lambda t: None if t is None else t.to(dtype)  # noqa: E731
        return VisualStore(cast(self.grids), cast(self.regions), cast(self.texts), self.o)


def translate_split(
    model: TranslationModel,
    split: CorpusSplit,
    src_vocab: Vocabulary,
    tgt_vocab: Vocabulary,
    visual: VisualStore | None,
    batch_size: int = 64,
    max_len: int | None = None,
) -> list[list[str]]:
    out = []
    for start in range(0, len(split), batch_size):
        chunk = split.pairs[start : start + batch_size]
        src = pad_batch([encode_tokens(p.source_tokens, src_vocab) for p in chunk])
        vis = visual.batch([p.pair_id for p in chunk]) if visual is not None else None
        limit = max_len or 2 * src.shape[1] + 10
        for ids in model.translate(src, vis, limit):
            out.append(tgt_vocab.decode(ids))
    return out


def dev_bleu(model, split, src_vocab, tgt_vocab, visual) -> float:
    hyps = translate_split(model, split, src_vocab, tgt_vocab, visual)
    return bleu_corpus(hyps, [p.target_tokens for p in split.pairs]).score


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainedModel:
    model: TranslationModel
    best_dev_bleu: float
    best_epoch: int
    epochs_run: int
    updates: int
    losses: list[float] = field(default_factory=list)  # per update
    epoch_log: list[tuple[int, float, float]] = field(default_factory=list)  # epoch, mean loss, dev bleu
    final_state: dict[str, torch.Tensor] | None = None  # weights after the last update


def _epoch_seed(seed: int, epoch: int) -> int:
    return seed * 1_000_003 + epoch


def train_model(
    train: CorpusSplit,
    dev: CorpusSplit,
    condition: str,
    cfg: TrainConfig,
    seed: int,
    *,
    src_vocab: Vocabulary,
    tgt_vocab: Vocabulary,
    dims: ModelDims,
    train_visual: VisualStore | None = None,
    dev_visual: VisualStore | None = None,
    dev_scorer: Callable[[TranslationModel, int], float] | None = None,
    log_path=None,
) -> TrainedModel:
    if len(train) == 0 or len(dev) == 0:
        raise TrainingError("training and dev splits must be non-empty")
    dtype = cfg.torch_dtype
    torch.manual_seed(seed)
    model = TranslationModel(len(src_vocab), len(tgt_vocab), dims, condition, cfg.dropout, cfg.freeze_region_filter)
    model.to(dtype)
    model.reset_parameters(torch.Generator().manual_seed(seed), cfg.init_scale)
    train_visual = train_visual.to(dtype) if train_visual is not None else None
    dev_visual = dev_visual.to(dtype) if dev_visual is not None else None
    if dev_scorer is None:
        dev_scorer = lambda m, _epoch: dev_bleu(m, dev, src_vocab, tgt_vocab, dev_visual)  # noqa: E731

    params = {n: p for n, p in model.named_parameters() if p.requires_grad}
    opt = OptimizerState()
    stopper = EarlyStopper(cfg.patience, cfg.max_epochs)
    best_state = copy.deepcopy(model.state_dict())
    result = TrainedModel(model, -math.inf, 0, 0, 0)
    log_fh = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        if log_fh:
            log_fh.write("epoch\tloss\tdev_bleu\n")
        while not stopper.should_stop:
            epoch = stopper.epoch + 1
            model.train()
            epoch_losses = []
            for batch in batch_iterator(train, cfg.batch_size, _epoch_seed(seed, epoch), src_vocab, tgt_vocab):
                if cfg.max_updates is not None and result.updates >= cfg.max_updates:
                    break
                vis = train_visual.batch(batch.pair_ids) if train_visual is not None else None
                logp = model(batch.src, batch.tgt, vis)
                loss = cross_entropy_loss(logp, batch.tgt[:, 1:], log_space=True)
                if not torch.isfinite(loss):
                    raise TrainingError(f"non-finite loss at epoch {epoch}, update {result.updates + 1}")
                grads = torch.autograd.grad(loss, list(params.values()), allow_unused=True)
                adam_update(params, dict(zip(params, grads)), opt, cfg)
                result.updates += 1
                result.losses.append(loss.item())
                epoch_losses.append(loss.item())
            model.eval()
            score = dev_scorer(model, epoch)
            mean_loss = float(np.mean(epoch_losses)) if epoch_losses else float("nan")
            if stopper.update(score):
                best_state = copy.deepcopy(model.state_dict())
            result.epoch_log.append((epoch, mean_loss, score))
            log.info("epoch %d loss %.4f dev_bleu %.4f", epoch, mean_loss, score)
            if log_fh:
                log_fh.write(f"{epoch}\t{mean_loss:.6f}\t{score:.6f}\n")
            if cfg.max_updates is not None and result.updates >= cfg.max_updates:
                break
    finally:
        if log_fh:
            log_fh.close()
    result.final_state = copy.deepcopy(model.state_dict())
    model.load_state_dict(best_state)
    model.eval()
    result.best_dev_bleu = stopper.best_score
    result.best_epoch = stopper.best_epoch
    result.epochs_run = stopper.epoch
    return result


# ---------------------------------------------------------------------------
# checkpoints: b"MMTC" | version u8 | count u32 | per tensor: name_len u32, name, rows u32, cols u32, float32 payload

CKPT_MAGIC = b"MMTC"
CKPT_VERSION = 1


def write_checkpoint(tensors: Mapping[str, np.ndarray | torch.Tensor], path) -> None:
    parts = [CKPT_MAGIC, struct.pack("<BI", CKPT_VERSION, len(tensors))]
    for name, t in tensors.items():
        arr = t.detach().cpu().numpy() if torch.is_tensor(t) else np.asarray(t)
        arr = arr.reshape(1, -1) if arr.ndim < 2 else arr.reshape(arr.shape[0], -1)
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw + struct.pack("<II", *arr.shape))
        parts.append(arr.astype("<f4").tobytes(order="C"))
    Path(path).write_bytes(b"".join(parts))


def read_checkpoint(path) -> dict[str, np.ndarray]:
    blob = Path(path).read_bytes()
    if blob[:4] != CKPT_MAGIC:
        raise BadMagicError(f"{path}: bad magic bytes {blob[:4]!r}, expected {CKPT_MAGIC!r}")
    pos = 4

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(blob):
            raise TruncatedPayloadError(f"{path}: truncated at byte {pos} (needed {n} more)")
        chunk = blob[pos : pos + n]
        pos += n
        return chunk

    version, count = struct.unpack("<BI", take(5))
    if version != CKPT_VERSION:
        raise UnsupportedVersionError(f"{path}: unsupported checkpoint version {version}")
    out = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        rows, cols = struct.unpack("<II", take(8))
        out[name] = np.frombuffer(take(4 * rows * cols), dtype="<f4").reshape(rows, cols).astype(np.float32)
    if pos != len(blob):
        raise FeatureFileError(f"{path}: {len(blob) - pos} trailing bytes")
    return out


def save_model(model: nn.Module, path) -> None:
    write_checkpoint(dict(model.state_dict()), path)


def load_model_state(model: nn.Module, path) -> None:
    stored = read_checkpoint(path)
    state = model.state_dict()
    missing = set(state) - set(stored)
    if missing:
        raise KeyError(f"checkpoint lacks tensors: {sorted(missing)}")
    with torch.no_grad():
        for name, t in state.items():
            t.copy_(torch.from_numpy(stored[name].reshape(t.shape)))


# ---------------------------------------------------------------------------
# gradient checking


def relative_error(a: float, b: float) -> float:
    return abs(a - b) / max(1e-8, abs(a) + abs(b))


def gradient_check(
    forward: Callable[[], torch.Tensor],
    params: Mapping[str, torch.Tensor] | Iterable[tuple[str, torch.Tensor]],
    tolerance: float = 1e-4,
    step: float = 1e-5,
) -> dict[str, float]:
    """Max relative error between autograd and central differences, per named tensor.

    ``forward`` must be deterministic and return a scalar; parameters are
    perturbed in place and restored.
    """
    params = dict(params)
    tensors = list(params.values())
    for t in tensors:
        if not t.requires_grad:
            t.requires_grad_(True)
    analytic = torch.autograd.grad(forward(), tensors, allow_unused=True)
    report = {}
    with torch.no_grad():
        for (name, t), g in zip(params.items(), analytic):
            g = torch.zeros_like(t) if g is None else g
            flat, gflat = t.view(-1), g.reshape(-1)
            worst = 0.0
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + step
                plus = forward().item()
                flat[i] = orig - step
                minus = forward().item()
                flat[i] = orig
                worst = max(worst, relative_error(gflat[i].item(), (plus - minus) / (2 * step)))
            report[name] = worst
    bad = {k: v for k, v in report.items() if v >= tolerance}
    if bad:
        log.warning("gradient check above tolerance %g: %s", tolerance, bad)
    return report
