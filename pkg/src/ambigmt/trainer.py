"""Optimization recipe: Adam + warmup/inverse-sqrt decay, token batching,
label smoothing, early stopping, and checkpoint averaging.

Batch accounting: a batch costs ``n_sentences * max(longest source, longest
target)`` counted pad-inclusive, where each source carries an appended eos
and each target a bos/eos; no batch may cost more than
``max_tokens_per_batch``. Checkpoints are written once per epoch, which is
what makes "average the last k checkpoints" well-defined.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import torch
from torch import Tensor

from .corpus import ParallelExample
from .corruption import CorruptionConfig, corruption_rng, word_dropout
from .feature_store import FeatureNotFoundError, FeatureStore
from .models import TranslationModel, save_model
from .vocab import BOS_ID, EOS_ID, PAD_ID, Vocab

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    beta1: float = 0.9
    beta2: float = 0.98
    warmup_steps: int = 2000
    lr_init: float = 1e-7
    lr_peak: float = 0.005
    max_tokens_per_batch: int = 4096
    dropout: float = 0.3
    label_smoothing: float = 0.1
    patience: int = 10
    avg_last_k: int = 10
    seed: int = 1
    max_epochs: int = 100
    adam_eps: float = 1e-8
    early_stop_metric: str = "loss"  # "loss" or "bleu"

    def __post_init__(self):
        if self.early_stop_metric not in ("loss", "bleu"):
            raise ValueError("early_stop_metric must be 'loss' or 'bleu'")


def lr_schedule(step: int, config: TrainConfig) -> float:
    """Linear warmup from lr_init to lr_peak, then inverse-sqrt decay."""
    if step < 0:
        raise ValueError("step must be >= 0")
    if step <= config.warmup_steps:
        frac = step / config.warmup_steps if config.warmup_steps else 1.0
        return config.lr_init + (config.lr_peak - config.lr_init) * frac
    return config.lr_peak * (config.warmup_steps / step) ** 0.5


def label_smoothed_loss(log_probs: Tensor, targets: Tensor,
                        eps: float = 0.1, pad_id: int = PAD_ID) -> Tensor:
    """(1-eps) * NLL(target) + eps * mean NLL over the vocabulary.

    Averaged over non-pad target positions. With eps=0 this is the exact
    NLL; with a uniform predictive distribution it equals log(vocab) for
    any eps.
    """
    log_probs = log_probs.reshape(-1, log_probs.size(-1))
    targets = targets.reshape(-1)
    mask = targets.ne(pad_id)
    if not mask.any():
        raise ValueError("loss undefined: every target position is padding")
    nll = -log_probs.gather(1, targets.clamp(min=0).unsqueeze(1)).squeeze(1)
    smooth = -log_probs.mean(dim=-1)
    per_token = (1.0 - eps) * nll + eps * smooth
    return per_token[mask].mean()


@dataclass
class Batch:
    examples: list[ParallelExample]
    max_len: int  # pad-inclusive row length shared by both sides' accounting

    @property
    def token_cost(self) -> int:
        return len(self.examples) * self.max_len


def _cost_len(ex: ParallelExample) -> int:
    # +1 for the appended eos (source) / bos or eos (target input/output)
    return max(len(ex.source) + 1, len(ex.target) + 1)


def make_batches(examples: Sequence[ParallelExample],
                 max_tokens: int) -> list[Batch]:
    """Greedy token-budget batching over length-sorted examples."""
    ordered = sorted(examples, key=lambda ex: (_cost_len(ex), ex.id))
    batches: list[Batch] = []
    current: list[ParallelExample] = []
    current_max = 0
    for ex in ordered:
        length = _cost_len(ex)
        if length > max_tokens:
            raise ValueError(
                f"example {ex.id!r} alone costs {length} tokens, over the "
                f"{max_tokens} budget")
        new_max = max(current_max, length)
        if current and (len(current) + 1) * new_max > max_tokens:
            batches.append(Batch(current, current_max))
            current, current_max = [], 0
            new_max = length
        current.append(ex)
        current_max = new_max
    if current:
        batches.append(Batch(current, current_max))
    for batch in batches:
        assert batch.token_cost <= max_tokens
    return batches


def _pad(rows: list[list[int]], width: int) -> Tensor:
    out = torch.full((len(rows), width), PAD_ID, dtype=torch.long)
    for i, row in enumerate(rows):
        out[i, :len(row)] = torch.tensor(row, dtype=torch.long)
    return out


def encode_batch(batch: Batch, src_vocab: Vocab, tgt_vocab: Vocab,
                 corruption: CorruptionConfig | None = None,
                 rng: np.random.Generator | None = None,
                 ) -> tuple[Tensor, Tensor, Tensor]:
    """Tensors (src, tgt_in, tgt_out) for one batch, with optional word dropout."""
    src_rows, tgt_in_rows, tgt_out_rows = [], [], []
    for ex in batch.examples:
        source = list(ex.source)
        if corruption is not None and corruption.p > 0:
            source = word_dropout(source, corruption, rng)
        src_ids = src_vocab.encode(source) + [EOS_ID]
        tgt_ids = tgt_vocab.encode(list(ex.target))
        src_rows.append(src_ids)
        tgt_in_rows.append([BOS_ID] + tgt_ids)
        tgt_out_rows.append(tgt_ids + [EOS_ID])
    src_w = max(len(r) for r in src_rows)
    tgt_w = max(len(r) for r in tgt_in_rows)
    return _pad(src_rows, src_w), _pad(tgt_in_rows, tgt_w), _pad(tgt_out_rows, tgt_w)


def batch_features(examples: Sequence[ParallelExample], store: FeatureStore,
                   fusion_mode: str) -> tuple[Tensor | None, Tensor | None]:
    """Load the feature tensors a fusion mode needs for a batch of examples."""
    if fusion_mode == "none":
        return None, None
    for ex in examples:
        if ex.image_id is None:
            raise FeatureNotFoundError(f"example {ex.id!r} has no image_id")
    if fusion_mode == "gated":
        pooled = np.stack([store.load_pooled(ex.image_id) for ex in examples])
        return torch.from_numpy(pooled), None
    grid = np.stack([store.load(ex.image_id).grid for ex in examples])
    return None, torch.from_numpy(grid)


def check_features_resolvable(examples: Sequence[ParallelExample],
                              store: FeatureStore | None,
                              fusion_mode: str) -> None:
    if fusion_mode == "none":
        return
    if store is None:
        raise FeatureNotFoundError(
            f"fusion mode {fusion_mode!r} needs a feature store")
    for ex in examples:
        if ex.image_id is None:
            raise FeatureNotFoundError(f"example {ex.id!r} has no image_id")
        if ex.image_id not in store:
            raise FeatureNotFoundError(
                f"image {ex.image_id!r} (example {ex.id!r}) missing from store")


@dataclass
class TrainResult:
    checkpoint_dir: Path
    checkpoint_paths: list[Path]
    log_path: Path
    epochs_run: int
    best_epoch: int
    best_val_loss: float
    stopped_early: bool
    history: list[dict] = field(default_factory=list)


def _dataset_loss(model: TranslationModel, batches: list[Batch],
                  src_vocab: Vocab, tgt_vocab: Vocab, eps: float,
                  store: FeatureStore | None) -> float:
    model.eval()
    total, n_tokens = 0.0, 0
    with torch.no_grad():
        for batch in batches:
            src, tgt_in, tgt_out = encode_batch(batch, src_vocab, tgt_vocab)
            pooled, grid = batch_features(batch.examples, store,
                                          model.config.fusion_mode)
            log_probs = model(src, tgt_in, pooled=pooled, grid=grid)
            n = int(tgt_out.ne(PAD_ID).sum())
            total += float(label_smoothed_loss(log_probs, tgt_out, eps)) * n
            n_tokens += n
    return total / max(n_tokens, 1)


def _val_bleu(model, batches, src_vocab, tgt_vocab, store) -> float:
    from .evaluation import Translator, bleu

    translator = Translator(model, src_vocab, tgt_vocab, beam_size=1)
    hyps, refs = [], []
    for batch in batches:
        for ex in batch.examples:
            pooled, grid = batch_features([ex], store, model.config.fusion_mode)
            hyps.append(translator.translate(ex.source, pooled=pooled, grid=grid))
            refs.append(list(ex.target))
    return bleu(hyps, refs)


def train(model: TranslationModel,
          train_set: Sequence[ParallelExample],
          val_set: Sequence[ParallelExample],
          src_vocab: Vocab, tgt_vocab: Vocab,
          config: TrainConfig,
          out_dir: str | Path,
          feature_store: FeatureStore | None = None,
          corruption: CorruptionConfig | None = None) -> TrainResult:
    """Full training run: token batches, schedule, early stopping, checkpoints.

    Word dropout, when configured, is resampled per epoch and applied only
    to training sources, never to validation. One checkpoint per epoch;
    stops when validation fails to improve for ``config.patience``
    consecutive epochs or at ``config.max_epochs``.
    """
    out_dir = Path(out_dir)
    ckpt_dir = out_dir / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    log_path = out_dir / "train_log.jsonl"

    fusion_mode = model.config.fusion_mode
    check_features_resolvable(list(train_set) + list(val_set), feature_store,
                              fusion_mode)

    torch.manual_seed(config.seed)
    order_rng = np.random.default_rng([config.seed, 0xBA7C4])

    train_batches = make_batches(train_set, config.max_tokens_per_batch)
    val_batches = make_batches(val_set, config.max_tokens_per_batch)

    optimizer = torch.optim.Adam(model.parameters(), lr=config.lr_init,
                                 betas=(config.beta1, config.beta2),
                                 eps=config.adam_eps)

    with open(log_path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({
            "event": "start", "fusion_mode": fusion_mode,
            "config": asdict(config),
            "word_dropout": corruption.p if corruption else None,
            "n_train": len(train_set), "n_val": len(val_set),
        }, sort_keys=True) + "\n")

    best_val = float("inf")
    best_epoch = 0
    bad_epochs = 0
    n_updates = 0
    stopped_early = False
    history: list[dict] = []
    checkpoint_paths: list[Path] = []

    epoch = 0
    for epoch in range(1, config.max_epochs + 1):
        model.train()
        epoch_rng = corruption_rng(corruption, epoch) if corruption else None
        perm = order_rng.permutation(len(train_batches))
        total_loss, total_tokens = 0.0, 0
        lr = lr_schedule(n_updates, config)
        for batch_idx in perm:
            batch = train_batches[batch_idx]
            assert batch.token_cost <= config.max_tokens_per_batch
            src, tgt_in, tgt_out = encode_batch(
                batch, src_vocab, tgt_vocab, corruption, epoch_rng)
            pooled, grid = batch_features(batch.examples, feature_store,
                                          fusion_mode)
            lr = lr_schedule(n_updates, config)
            for group in optimizer.param_groups:
                group["lr"] = lr
            optimizer.zero_grad()
            log_probs = model(src, tgt_in, pooled=pooled, grid=grid)
            loss = label_smoothed_loss(log_probs, tgt_out,
                                       config.label_smoothing)
            loss.backward()
            optimizer.step()
            n_updates += 1
            n = int(tgt_out.ne(PAD_ID).sum())
            total_loss += float(loss.detach()) * n
            total_tokens += n

        train_loss = total_loss / max(total_tokens, 1)
        val_loss = _dataset_loss(model, val_batches, src_vocab, tgt_vocab,
                                 config.label_smoothing, feature_store)
        val_bleu = None
        if config.early_stop_metric == "bleu":
            val_bleu = _val_bleu(model, val_batches, src_vocab, tgt_vocab,
                                 feature_store)

        ckpt_path = ckpt_dir / f"epoch_{epoch:04d}.pt"
        save_model(ckpt_path, model, src_vocab, tgt_vocab)
        checkpoint_paths.append(ckpt_path)

        record = {"epoch": epoch, "steps": n_updates, "lr": lr,
                  "train_loss": train_loss, "val_loss": val_loss,
                  "val_bleu": val_bleu}
        history.append(record)
        with open(log_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
        logger.info("epoch %d: train %.4f val %.4f lr %.2e",
                    epoch, train_loss, val_loss, lr)

        criterion = -val_bleu if config.early_stop_metric == "bleu" else val_loss
        if criterion < best_val:
            best_val = criterion
            best_epoch = epoch
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= config.patience:
                stopped_early = True
                break

    return TrainResult(
        checkpoint_dir=ckpt_dir, checkpoint_paths=checkpoint_paths,
        log_path=log_path, epochs_run=epoch, best_epoch=best_epoch,
        best_val_loss=best_val, stopped_early=stopped_early, history=history)


def average_checkpoints(states: Sequence[Mapping[str, Tensor]]) -> dict[str, Tensor]:
    """Elementwise arithmetic mean of parameter sets with identical layout.

    Accumulates in float64 before casting back, so the result does not
    depend on input order beyond rounding noise far below 1e-7.
    """
    if not states:
        raise ValueError("need at least one checkpoint to average")
    reference = states[0]
    for state in states[1:]:
        if state.keys() != reference.keys():
            raise ValueError("checkpoints disagree on parameter names")
        for name in reference:
            if state[name].shape != reference[name].shape:
                raise ValueError(
                    f"parameter {name!r} has shape {tuple(state[name].shape)} "
                    f"vs {tuple(reference[name].shape)}")
    averaged = {}
    for name, tensor in reference.items():
        if tensor.is_floating_point():
            acc = torch.zeros_like(tensor, dtype=torch.float64)
            for state in states:
                acc += state[name].to(torch.float64)
            averaged[name] = (acc / len(states)).to(tensor.dtype)
        else:
            averaged[name] = tensor.clone()
    return averaged


def average_checkpoint_files(paths: Sequence[str | Path],
                             out_path: str | Path) -> None:
    """Average the model weights of checkpoint files; metadata from the first."""
    payloads = [torch.load(p, map_location="cpu", weights_only=True)
                for p in paths]
    merged = dict(payloads[0])
    merged["state"] = average_checkpoints([p["state"] for p in payloads])
    torch.save(merged, out_path)
