"""Word dropout: Bernoulli replacement of source tokens with an UNK symbol."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

UNK_TOKEN = "<unk>"


@dataclass(frozen=True)
class CorruptionConfig:
    p: float = 0.1
    unk_token: str = UNK_TOKEN
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.p <= 1.0):
            raise ValueError(f"dropout probability must be in [0, 1], got {self.p}")


def word_dropout(tokens: Sequence[str], config: CorruptionConfig,
                 rng: np.random.Generator) -> list[str]:
    """Replace each token independently with probability ``config.p``.

    Output length equals input length; one uniform draw is consumed per
    position, left to right, so a fixed rng state reproduces the output.
    All token types are eligible, punctuation included.
    """
    if not tokens:
        raise ValueError("word_dropout expects a non-empty token sequence")
    draws = rng.random(len(tokens))
    return [config.unk_token if draw < config.p else token
            for token, draw in zip(tokens, draws)]


def corruption_rng(config: CorruptionConfig, epoch: int = 0) -> np.random.Generator:
    """Independent per-epoch stream derived from the corruption seed."""
    return np.random.default_rng([config.seed, epoch])
