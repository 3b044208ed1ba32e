"""Caption corpora: tokenization, gender filtering, splits, and statistics.

Corpora live on disk as UTF-8 JSON lines. Caption records carry
``{"id", "text", "image_id"}`` (image_id optional); parallel records carry
``{"id", "source", "target", "image_id"}`` with source/target stored as
token arrays.
"""

from __future__ import annotations

import json
import random
import re
from collections import Counter
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence, TypeVar

MALE_PRONOUNS = frozenset({"he", "him", "his", "himself"})
FEMALE_PRONOUNS = frozenset({"she", "her", "hers", "herself"})
GENDER_PRONOUNS = MALE_PRONOUNS | FEMALE_PRONOUNS

# Words, apostrophe-clitics ('s, 'll, ...), then single punctuation marks.
_TOKEN_RE = re.compile(r"\w+|'\w+|[^\w\s]")

T = TypeVar("T")


def tokenize(text: str) -> list[str]:
    """Lowercase and split a sentence into word tokens.

    Punctuation is detached from words and apostrophe-clitics are split off
    ("man's" -> ["man", "'s"]). Deterministic; empty input yields [].
    """
    text = text.replace("’", "'").lower()
    return _TOKEN_RE.findall(text)


@dataclass(frozen=True)
class Caption:
    """One caption: unique id, sentence text, optional image reference."""

    id: str
    text: str
    image_id: str | None = None

    def __post_init__(self):
        if not self.text.strip():
            raise ValueError(f"caption {self.id!r} has empty text")


@dataclass(frozen=True)
class ParallelExample:
    """One pseudo-parallel unit: ambiguous source tokens, English target tokens."""

    id: str
    source: tuple[str, ...]
    target: tuple[str, ...]
    image_id: str | None = None

    def __post_init__(self):
        if not self.source or not self.target:
            raise ValueError(f"example {self.id!r} has an empty side")


@dataclass(frozen=True)
class GenderLexicon:
    """Gendered nouns, gender-skewed profession phrases, and pronoun sets."""

    gendered_nouns: frozenset[str] = frozenset()
    skewed_professions: frozenset[str] = frozenset()
    male_pronouns: frozenset[str] = MALE_PRONOUNS
    female_pronouns: frozenset[str] = FEMALE_PRONOUNS

    def __post_init__(self):
        if self.male_pronouns & self.female_pronouns:
            raise ValueError("pronoun sets must be disjoint")
        for entries in (self.gendered_nouns, self.skewed_professions,
                        self.male_pronouns, self.female_pronouns):
            bad = [w for w in entries if w != w.lower()]
            if bad:
                raise ValueError(f"lexicon entries must be lowercase: {bad}")

    @property
    def pronouns(self) -> frozenset[str]:
        return self.male_pronouns | self.female_pronouns

    @classmethod
    def from_files(cls, nouns_path: str | Path,
                   professions_path: str | Path | None = None) -> "GenderLexicon":
        nouns = frozenset(read_lexicon_file(nouns_path))
        professions = frozenset(
            read_lexicon_file(professions_path)) if professions_path else frozenset()
        return cls(gendered_nouns=nouns, skewed_professions=professions)


def read_lexicon_file(path: str | Path) -> list[str]:
    """Read a plain-text lexicon: one lowercase entry per line, '#' comments."""
    entries = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.split("#", 1)[0].strip().lower()
        if line:
            entries.append(line)
    return entries


def default_lexicon() -> GenderLexicon:
    """Lexicon shipped with the package (a curated superset of common cases)."""
    data = resources.files("ambigmt") / "data"
    with resources.as_file(data / "gendered_nouns.txt") as p:
        nouns = frozenset(read_lexicon_file(p))
    with resources.as_file(data / "skewed_professions.txt") as p:
        professions = frozenset(read_lexicon_file(p))
    return GenderLexicon(gendered_nouns=nouns, skewed_professions=professions)


def _contains_phrase(tokens: Sequence[str], phrase: Sequence[str]) -> bool:
    n = len(phrase)
    if n == 0 or n > len(tokens):
        return False
    return any(tuple(tokens[i:i + n]) == tuple(phrase)
               for i in range(len(tokens) - n + 1))


def filter_gendered(corpus: Iterable[Caption], lexicon: GenderLexicon) -> list[Caption]:
    """Drop captions that reveal entity gender through nouns or skewed professions.

    Pronouns are deliberately kept: they are the ambiguity the dataset is
    built around. Matching happens on the tokenized, lowercased sentence;
    profession phrases match as contiguous token subsequences. Relative
    order of survivors is preserved.
    """
    profession_tokens = [tuple(tokenize(p)) for p in lexicon.skewed_professions]
    kept = []
    for caption in corpus:
        tokens = tokenize(caption.text)
        if any(t in lexicon.gendered_nouns for t in tokens):
            continue
        if any(_contains_phrase(tokens, p) for p in profession_tokens):
            continue
        kept.append(caption)
    return kept


def detect_skewed_professions(corpus: Iterable[Caption],
                              candidates: Iterable[str],
                              threshold: float,
                              male_pronouns: frozenset[str] = MALE_PRONOUNS,
                              female_pronouns: frozenset[str] = FEMALE_PRONOUNS,
                              ) -> set[str]:
    """Find candidate phrases used in a single gender-specific context.

    For each candidate, the co-occurring sentences are those containing the
    phrase and at least one gender pronoun. A candidate is returned when the
    dominant single-gender share among its co-occurring sentences reaches
    ``threshold``; sentences mentioning both genders count against the
    dominant share. Candidates with zero pronoun co-occurrences are excluded.
    """
    if not (0.0 <= threshold <= 1.0):
        raise ValueError(f"threshold must be in [0, 1], got {threshold}")
    candidates = list(candidates)
    if not candidates:
        raise ValueError("candidates must be non-empty")

    tokenized = [tokenize(c.text) for c in corpus]
    skewed = set()
    for phrase in candidates:
        phrase_tokens = tuple(tokenize(phrase))
        n_male = n_female = n_cooccur = 0
        for tokens in tokenized:
            if not _contains_phrase(tokens, phrase_tokens):
                continue
            has_male = any(t in male_pronouns for t in tokens)
            has_female = any(t in female_pronouns for t in tokens)
            if not (has_male or has_female):
                continue
            n_cooccur += 1
            if has_male and not has_female:
                n_male += 1
            elif has_female and not has_male:
                n_female += 1
        if n_cooccur and max(n_male, n_female) / n_cooccur >= threshold:
            skewed.add(phrase)
    return skewed


def split(corpus: Sequence[T], n_val: int, n_test: int,
          seed: int) -> tuple[list[T], list[T], list[T]]:
    """Partition a corpus into (train, val, test) with seeded sampling.

    Validation and test items are sampled at random; each split keeps the
    original corpus order. Same seed, same partition.
    """
    n = len(corpus)
    if n_val + n_test > n:
        raise ValueError(
            f"requested n_val={n_val} + n_test={n_test} items "
            f"but corpus has only {n}")
    indices = list(range(n))
    random.Random(seed).shuffle(indices)
    val_idx = set(indices[:n_val])
    test_idx = set(indices[n_val:n_val + n_test])
    train, val, test = [], [], []
    for i, item in enumerate(corpus):
        if i in val_idx:
            val.append(item)
        elif i in test_idx:
            test.append(item)
        else:
            train.append(item)
    return train, val, test


@dataclass(frozen=True)
class CorpusStats:
    """Sentence, word, and gender-pronoun counts over the English side."""

    n_sentences: int
    n_words: int
    n_gender_pronouns: int

    def __post_init__(self):
        if self.n_gender_pronouns > self.n_words:
            raise ValueError("pronoun count cannot exceed word count")

    def __add__(self, other: "CorpusStats") -> "CorpusStats":
        return CorpusStats(self.n_sentences + other.n_sentences,
                           self.n_words + other.n_words,
                           self.n_gender_pronouns + other.n_gender_pronouns)

    def to_dict(self) -> dict:
        return {"n_sentences": self.n_sentences,
                "n_words": self.n_words,
                "n_gender_pronouns": self.n_gender_pronouns}


def corpus_stats(examples: Iterable[ParallelExample],
                 lexicon: GenderLexicon | None = None) -> CorpusStats:
    """Table-style statistics computed over the target (English) side."""
    pronouns = lexicon.pronouns if lexicon is not None else GENDER_PRONOUNS
    n_sentences = n_words = n_pronouns = 0
    for ex in examples:
        n_sentences += 1
        n_words += len(ex.target)
        n_pronouns += sum(1 for t in ex.target if t in pronouns)
    return CorpusStats(n_sentences, n_words, n_pronouns)


# --- JSONL corpus I/O ------------------------------------------------------

def _dump(record: dict) -> str:
    return json.dumps(record, ensure_ascii=False, sort_keys=True)


def read_captions(path: str | Path) -> list[Caption]:
    captions = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            if rec["id"] in seen:
                raise ValueError(f"duplicate caption id {rec['id']!r} in {path}")
            seen.add(rec["id"])
            captions.append(Caption(id=rec["id"], text=rec["text"],
                                    image_id=rec.get("image_id")))
    return captions


def write_captions(path: str | Path, captions: Iterable[Caption]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for c in captions:
            rec = {"id": c.id, "text": c.text}
            if c.image_id is not None:
                rec["image_id"] = c.image_id
            fh.write(_dump(rec) + "\n")


def read_examples(path: str | Path) -> list[ParallelExample]:
    examples = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            examples.append(ParallelExample(
                id=rec["id"], source=tuple(rec["source"]),
                target=tuple(rec["target"]), image_id=rec.get("image_id")))
    return examples


def write_examples(path: str | Path, examples: Iterable[ParallelExample]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            rec = {"id": ex.id, "source": list(ex.source), "target": list(ex.target)}
            if ex.image_id is not None:
                rec["image_id"] = ex.image_id
            fh.write(_dump(rec) + "\n")


def token_frequencies(examples: Iterable[ParallelExample],
                      side: str = "target") -> Counter:
    counts: Counter = Counter()
    for ex in examples:
        counts.update(getattr(ex, side))
    return counts
