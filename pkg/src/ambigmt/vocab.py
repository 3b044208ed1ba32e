"""Word-level vocabulary with reserved specials.

Word-level (not subword) segmentation keeps pronoun tokens atomic, which the
gender metrics depend on. Index layout is fixed: <pad>=0, <unk>=1, <bos>=2,
<eos>=3.
"""

from __future__ import annotations

from collections import Counter
from typing import Iterable, Sequence

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
BOS_TOKEN = "<bos>"
EOS_TOKEN = "<eos>"
SPECIALS = (PAD_TOKEN, UNK_TOKEN, BOS_TOKEN, EOS_TOKEN)

PAD_ID = 0
UNK_ID = 1
BOS_ID = 2
EOS_ID = 3


class Vocab:
    def __init__(self, tokens: Sequence[str]):
        self.itos = list(SPECIALS) + [t for t in tokens if t not in SPECIALS]
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ValueError("duplicate tokens in vocabulary")

    @classmethod
    def build(cls, sequences: Iterable[Sequence[str]], min_count: int = 2) -> "Vocab":
        """Frequency-cutoff vocabulary; ties broken alphabetically for determinism."""
        counts: Counter = Counter()
        for seq in sequences:
            counts.update(seq)
        kept = sorted((t for t, c in counts.items()
                       if c >= min_count and t not in SPECIALS),
                      key=lambda t: (-counts[t], t))
        return cls(kept)

    def encode(self, tokens: Sequence[str], allow_unk: bool = True) -> list[int]:
        ids = []
        for t in tokens:
            i = self.stoi.get(t)
            if i is None:
                if not allow_unk:
                    raise KeyError(f"token {t!r} not in vocabulary and UNK disabled")
                i = UNK_ID
            ids.append(i)
        return ids

    def decode(self, ids: Sequence[int], strip_specials: bool = True) -> list[str]:
        tokens = [self.itos[i] for i in ids]
        if strip_specials:
            tokens = [t for t in tokens if t not in SPECIALS]
        return tokens

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi
