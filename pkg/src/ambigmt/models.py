"""Translation architectures: text-only Transformer plus two fusion variants.

All three share one small Transformer configuration. The gated variant adds
a projected, broadcast pooled-image vector modulated by a learned sigmoid
gate (H = H_text + lambda * H_avg, elementwise); the concat variant appends
the 196 projected spatial feature vectors to the encoder output as extra
attendable positions (H = [H_text ; H_vis]).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import torch
from torch import Tensor, nn

from .feature_store import GRID_SHAPE, POOLED_DIM
from .vocab import BOS_ID, EOS_ID, PAD_ID, Vocab

N_GRID_POSITIONS = GRID_SHAPE[1] * GRID_SHAPE[2]  # 196 spatial positions
FUSION_MODES = ("none", "gated", "concat")

CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    src_vocab_size: int
    tgt_vocab_size: int
    fusion_mode: str = "none"
    n_enc_layers: int = 4
    n_dec_layers: int = 4
    n_heads: int = 4
    d_model: int = 128
    d_ffn: int = 256
    max_positions: int = 256
    dropout: float = 0.3

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError(
                f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if self.fusion_mode not in FUSION_MODES:
            raise ValueError(f"fusion_mode must be one of {FUSION_MODES}")


@dataclass
class EncoderState:
    """Encoder output: (batch, src_len, d_model) plus True-at-pad mask."""

    hidden: Tensor
    pad_mask: Tensor


@dataclass
class FusedState:
    """Decoder memory: text rows, optionally followed by visual rows."""

    hidden: Tensor
    pad_mask: Tensor


class SinusoidalPositions(nn.Module):
    def __init__(self, max_positions: int, d_model: int):
        super().__init__()
        position = torch.arange(max_positions).unsqueeze(1)
        div = torch.exp(torch.arange(0, d_model, 2) * (-math.log(10000.0) / d_model))
        table = torch.zeros(max_positions, d_model)
        table[:, 0::2] = torch.sin(position * div)
        table[:, 1::2] = torch.cos(position * div)
        self.register_buffer("table", table, persistent=False)

    def forward(self, x: Tensor) -> Tensor:
        return x + self.table[: x.size(1)].to(x.dtype)


class TextEncoder(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.embed = nn.Embedding(config.src_vocab_size, config.d_model,
                                  padding_idx=PAD_ID)
        self.positions = SinusoidalPositions(config.max_positions, config.d_model)
        self.dropout = nn.Dropout(config.dropout)
        layer = nn.TransformerEncoderLayer(
            d_model=config.d_model, nhead=config.n_heads,
            dim_feedforward=config.d_ffn, dropout=config.dropout,
            batch_first=True)
        self.layers = nn.TransformerEncoder(layer, config.n_enc_layers,
                                            enable_nested_tensor=False)
        self.scale = math.sqrt(config.d_model)

    def forward(self, src_ids: Tensor) -> EncoderState:
        if src_ids.size(1) > self.config.max_positions:
            raise ValueError(
                f"source length {src_ids.size(1)} exceeds "
                f"max_positions={self.config.max_positions}")
        pad_mask = src_ids.eq(PAD_ID)
        x = self.dropout(self.positions(self.embed(src_ids) * self.scale))
        hidden = self.layers(x, src_key_padding_mask=pad_mask)
        return EncoderState(hidden=hidden, pad_mask=pad_mask)


class GatedFusion(nn.Module):
    """H = H_text + lambda * H_avg with a learned per-position, per-dim gate.

    H_avg is the pooled image vector after projection, broadcast to every
    text position; lambda = sigmoid(W [H_text ; H_avg] + b) stays in (0, 1)
    by construction.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.proj = nn.Linear(POOLED_DIM, config.d_model)
        self.gate = nn.Linear(2 * config.d_model, config.d_model)

    def forward(self, state: EncoderState, pooled: Tensor) -> FusedState:
        if pooled.dim() != 2 or pooled.size(-1) != POOLED_DIM:
            raise ValueError(
                f"pooled features must be (batch, {POOLED_DIM}), got {tuple(pooled.shape)}")
        h_avg = self.proj(pooled).unsqueeze(1).expand_as(state.hidden)
        lam = torch.sigmoid(self.gate(torch.cat([state.hidden, h_avg], dim=-1)))
        return FusedState(hidden=state.hidden + lam * h_avg,
                          pad_mask=state.pad_mask)


class ConcatFusion(nn.Module):
    """H = [H_text ; H_vis]: projected grid positions appended to the text rows.

    The 14x14 grid flattens to 196 positions with no positional encoding
    (the layout carries no sequence order); the projection bias lets the
    model tell the two modalities apart. Visual rows are always attendable.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.proj = nn.Linear(GRID_SHAPE[0], config.d_model)

    def forward(self, state: EncoderState, grid: Tensor) -> FusedState:
        if grid.dim() != 4 or tuple(grid.shape[1:]) != GRID_SHAPE:
            raise ValueError(
                f"grid features must be (batch, {GRID_SHAPE[0]}, {GRID_SHAPE[1]}, "
                f"{GRID_SHAPE[2]}), got {tuple(grid.shape)}")
        flat = grid.flatten(2).transpose(1, 2)  # (batch, 196, 1024)
        vis = self.proj(flat)
        hidden = torch.cat([state.hidden, vis], dim=1)
        vis_mask = torch.zeros(grid.size(0), N_GRID_POSITIONS, dtype=torch.bool,
                               device=grid.device)
        return FusedState(hidden=hidden,
                          pad_mask=torch.cat([state.pad_mask, vis_mask], dim=1))


class TranslationModel(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.encoder = TextEncoder(config)
        if config.fusion_mode == "gated":
            self.fusion: nn.Module | None = GatedFusion(config)
        elif config.fusion_mode == "concat":
            self.fusion = ConcatFusion(config)
        else:
            self.fusion = None
        self.tgt_embed = nn.Embedding(config.tgt_vocab_size, config.d_model,
                                      padding_idx=PAD_ID)
        self.tgt_positions = SinusoidalPositions(config.max_positions, config.d_model)
        self.tgt_dropout = nn.Dropout(config.dropout)
        layer = nn.TransformerDecoderLayer(
            d_model=config.d_model, nhead=config.n_heads,
            dim_feedforward=config.d_ffn, dropout=config.dropout,
            batch_first=True)
        self.decoder = nn.TransformerDecoder(layer, config.n_dec_layers)
        self.out_proj = nn.Linear(config.d_model, config.tgt_vocab_size)
        self.scale = math.sqrt(config.d_model)
        self._init_embeddings()

    def _init_embeddings(self):
        bound = self.config.d_model ** -0.5
        for embed in (self.encoder.embed, self.tgt_embed):
            nn.init.uniform_(embed.weight, -bound, bound)
            with torch.no_grad():
                embed.weight[PAD_ID].zero_()

    def encode(self, src_ids: Tensor, pooled: Tensor | None = None,
               grid: Tensor | None = None) -> FusedState:
        state = self.encoder(src_ids)
        if self.config.fusion_mode == "gated":
            if pooled is None:
                raise ValueError("gated fusion requires pooled image features")
            return self.fusion(state, pooled)
        if self.config.fusion_mode == "concat":
            if grid is None:
                raise ValueError("concat fusion requires grid image features")
            return self.fusion(state, grid)
        return FusedState(hidden=state.hidden, pad_mask=state.pad_mask)

    def decode(self, fused: FusedState, tgt_in_ids: Tensor) -> Tensor:
        """Log-probabilities over the target vocabulary at every prefix position."""
        t = tgt_in_ids.size(1)
        if t > self.config.max_positions:
            raise ValueError(
                f"target length {t} exceeds max_positions={self.config.max_positions}")
        causal = torch.triu(torch.ones(t, t, dtype=torch.bool,
                                       device=tgt_in_ids.device), diagonal=1)
        tgt_pad = tgt_in_ids.eq(PAD_ID)
        x = self.tgt_dropout(self.tgt_positions(self.tgt_embed(tgt_in_ids) * self.scale))
        hidden = self.decoder(x, fused.hidden, tgt_mask=causal,
                              tgt_key_padding_mask=tgt_pad,
                              memory_key_padding_mask=fused.pad_mask)
        return torch.log_softmax(self.out_proj(hidden), dim=-1)

    def forward(self, src_ids: Tensor, tgt_in_ids: Tensor,
                pooled: Tensor | None = None, grid: Tensor | None = None) -> Tensor:
        return self.decode(self.encode(src_ids, pooled, grid), tgt_in_ids)


@dataclass
class Hypothesis:
    tokens: list[int]  # generated ids, eos included when produced
    score: float       # cumulative log-probability
    finished: bool

    @property
    def normalized_score(self) -> float:
        return self.score / max(len(self.tokens), 1)


def beam_search(model: TranslationModel, src_ids: Sequence[int],
                pooled: Tensor | None = None, grid: Tensor | None = None,
                beam_size: int = 5, max_len: int = 50) -> list[int]:
    """Length-normalized beam search over one source sentence.

    Scores are cumulative log-probabilities divided by the number of
    generated tokens (eos included). Each step ranks all one-token
    extensions of the alive beams and keeps the top ``beam_size``; an
    extension ending in eos retires its slot, so beam_size=1 reduces to
    greedy decoding, and a beam wide enough to hold every prefix enumerates
    the full search space. Hypotheses still alive at ``max_len`` are
    finalized as-is. pad/bos are never generated.
    """
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            device = next(model.parameters()).device
            src = torch.tensor([list(src_ids)], dtype=torch.long, device=device)
            fused = model.encode(src, pooled=pooled, grid=grid)

            alive = [Hypothesis([], 0.0, finished=False)]
            finished: list[Hypothesis] = []
            for _ in range(max_len):
                tgt_in = torch.tensor(
                    [[BOS_ID] + h.tokens for h in alive], dtype=torch.long,
                    device=device)
                memory = FusedState(
                    hidden=fused.hidden.expand(len(alive), -1, -1),
                    pad_mask=fused.pad_mask.expand(len(alive), -1))
                log_probs = model.decode(memory, tgt_in)[:, -1, :]
                log_probs[:, PAD_ID] = float("-inf")
                log_probs[:, BOS_ID] = float("-inf")

                scores = torch.tensor([h.score for h in alive],
                                      device=device).unsqueeze(1) + log_probs
                flat = scores.flatten()
                k = min(beam_size, flat.numel())
                top_scores, top_idx = torch.topk(flat, k)

                vocab_size = log_probs.size(1)
                next_alive = []
                for score, idx in zip(top_scores.tolist(), top_idx.tolist()):
                    if score == float("-inf"):
                        continue
                    parent = alive[idx // vocab_size]
                    token = idx % vocab_size
                    hyp = Hypothesis(parent.tokens + [token], score,
                                     finished=token == EOS_ID)
                    if hyp.finished:
                        finished.append(hyp)
                    else:
                        next_alive.append(hyp)
                alive = next_alive
                if not alive:
                    break
            finished.extend(
                Hypothesis(h.tokens, h.score, finished=True) for h in alive)

            best = max(finished, key=lambda h: h.normalized_score)
            return [t for t in best.tokens if t != EOS_ID]
    finally:
        if was_training:
            model.train()


def save_model(path: str | Path, model: TranslationModel,
               src_vocab: Vocab, tgt_vocab: Vocab) -> None:
    """Self-describing checkpoint: version, config, vocabularies, weights."""
    torch.save({
        "version": CHECKPOINT_VERSION,
        "config": asdict(model.config),
        "src_vocab": list(src_vocab.itos),
        "tgt_vocab": list(tgt_vocab.itos),
        "state": model.state_dict(),
    }, path)


def load_model(path: str | Path) -> tuple[TranslationModel, Vocab, Vocab]:
    payload = torch.load(path, map_location="cpu", weights_only=True)
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(
            f"unsupported checkpoint version {payload.get('version')!r}")
    config = ModelConfig(**payload["config"])
    model = TranslationModel(config)
    model.load_state_dict(payload["state"])
    n_specials = 4
    src_vocab = Vocab(payload["src_vocab"][n_specials:])
    tgt_vocab = Vocab(payload["tgt_vocab"][n_specials:])
    return model, src_vocab, tgt_vocab
