from __future__ import annotations

import torch
import pytest

from ambigmt.corpus import Caption, ParallelExample, tokenize
from ambigmt.models import ModelConfig, TranslationModel


def tiny_config(fusion_mode: str = "none", vocab: int = 16,
                **overrides) -> ModelConfig:
    defaults = dict(src_vocab_size=vocab, tgt_vocab_size=vocab,
                    fusion_mode=fusion_mode, n_enc_layers=1, n_dec_layers=1,
                    n_heads=2, d_model=16, d_ffn=32, dropout=0.0,
                    max_positions=64)
    defaults.update(overrides)
    return ModelConfig(**defaults)


def tiny_model(fusion_mode: str = "none", seed: int = 0,
               **overrides) -> TranslationModel:
    torch.manual_seed(seed)
    return TranslationModel(tiny_config(fusion_mode, **overrides))


def example(id: str, source: str, target: str,
            image_id: str | None = None) -> ParallelExample:
    return ParallelExample(id=id, source=tuple(tokenize(source)),
                           target=tuple(tokenize(target)), image_id=image_id)


def caption(id: str, text: str, image_id: str | None = None) -> Caption:
    return Caption(id=id, text=text, image_id=image_id)


@pytest.fixture
def toy_examples() -> list[ParallelExample]:
    return [
        example("e1", "o reads a book .", "he reads a book .", "img-1"),
        example("e2", "o opens o bag .", "she opens her bag .", "img-2"),
        example("e3", "o finds the map .", "he finds the map .", "img-3"),
        example("e4", "o holds a cup .", "she holds a cup .", "img-4"),
    ]
