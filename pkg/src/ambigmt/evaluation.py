"""Metrics and the incongruent-image (adversarial) evaluation protocol.

BLEU here is corpus-level cumulative 4-gram BLEU: the geometric mean of
modified n-gram precisions (uniform 1/4 weights) times the brevity penalty,
scaled to [0, 100], with no smoothing. Two boundary rules are fixed so the
score is total: an n-gram level whose denominator is zero (corpus shorter
than n everywhere) is skipped as neutral, and any level with matches
possible but none found scores 0 overall.
"""

from __future__ import annotations

import json
import math
import random
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import torch
from torch import Tensor

from .corpus import FEMALE_PRONOUNS, MALE_PRONOUNS, ParallelExample
from .feature_store import FeatureStore
from .models import TranslationModel, beam_search
from .vocab import Vocab


class MetricUndefinedError(ValueError):
    """Raised when a metric has an empty evaluation set after restriction."""


class GenderClass(Enum):
    MALE = "male"
    FEMALE = "female"
    UNDETERMINED = "undetermined"


def classify_gender(tokens: Sequence[str]) -> GenderClass:
    """Three-way pronoun-based classification of a lowercased token sequence.

    Male if at least one male pronoun and no female pronoun appears; female
    symmetrically; undetermined when both sets hit or neither does.
    """
    has_male = any(t in MALE_PRONOUNS for t in tokens)
    has_female = any(t in FEMALE_PRONOUNS for t in tokens)
    if has_male and not has_female:
        return GenderClass.MALE
    if has_female and not has_male:
        return GenderClass.FEMALE
    return GenderClass.UNDETERMINED


def gender_accuracy(hypotheses: Sequence[Sequence[str]],
                    references: Sequence[Sequence[str]]) -> float:
    """Fraction of determinate-reference examples whose classes agree.

    Examples whose reference classifies as undetermined are excluded; an
    undetermined hypothesis against a determinate reference counts as
    incorrect.
    """
    if len(hypotheses) != len(references):
        raise ValueError(
            f"{len(hypotheses)} hypotheses vs {len(references)} references")
    n_considered = n_correct = 0
    for hyp, ref in zip(hypotheses, references):
        ref_class = classify_gender(ref)
        if ref_class is GenderClass.UNDETERMINED:
            continue
        n_considered += 1
        if classify_gender(hyp) is ref_class:
            n_correct += 1
    if n_considered == 0:
        raise MetricUndefinedError(
            "gender accuracy undefined: no reference classifies as male or female")
    return n_correct / n_considered


def _ngram_counts(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(hypotheses: Sequence[Sequence[str]],
         references: Sequence[Sequence[str]], max_n: int = 4) -> float:
    """Corpus-level cumulative BLEU in [0, 100] (see module docstring)."""
    if len(hypotheses) != len(references):
        raise ValueError(
            f"{len(hypotheses)} hypotheses vs {len(references)} references")
    if any(len(r) == 0 for r in references):
        raise ValueError("references must be non-empty")

    hyp_len = sum(len(h) for h in hypotheses)
    ref_len = sum(len(r) for r in references)
    if hyp_len == 0:
        return 0.0

    log_precisions = 0.0
    for n in range(1, max_n + 1):
        matched = total = 0
        for hyp, ref in zip(hypotheses, references):
            hyp_counts = _ngram_counts(hyp, n)
            if not hyp_counts:
                continue
            ref_counts = _ngram_counts(ref, n)
            total += sum(hyp_counts.values())
            matched += sum(min(count, ref_counts[gram])
                           for gram, count in hyp_counts.items())
        if total == 0:
            continue  # no n-grams at this order anywhere: neutral level
        if matched == 0:
            return 0.0
        log_precisions += math.log(matched / total) / max_n

    brevity = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    return 100.0 * brevity * math.exp(log_precisions)


def shuffle_images(examples: Sequence[ParallelExample],
                   seed: int) -> list[ParallelExample]:
    """Reassign images by a seeded derangement; text untouched.

    Only examples carrying an image take part; no participating position
    keeps its original image slot, and the multiset of image ids is
    preserved.
    """
    positions = [i for i, ex in enumerate(examples) if ex.image_id is not None]
    if len(positions) < 2:
        raise ValueError(
            f"need at least 2 examples with images to shuffle, got {len(positions)}")
    rng = random.Random(seed)
    perm = list(range(len(positions)))
    while True:
        rng.shuffle(perm)
        if all(perm[i] != i for i in range(len(perm))):
            break
    reassigned = list(examples)
    ids = [examples[p].image_id for p in positions]
    for slot, source in enumerate(perm):
        target_pos = positions[slot]
        ex = examples[target_pos]
        reassigned[target_pos] = ParallelExample(
            id=ex.id, source=ex.source, target=ex.target, image_id=ids[source])
    return reassigned


def image_awareness(metric_congruent: float, metric_incongruent: float) -> float:
    """Performance drop when incongruent images replace congruent ones."""
    return metric_congruent - metric_incongruent


@dataclass
class Translator:
    """Model plus vocabularies, decoding with beam search."""

    model: TranslationModel
    src_vocab: Vocab
    tgt_vocab: Vocab
    beam_size: int = 5
    max_len: int = 50

    def translate(self, source_tokens: Sequence[str],
                  pooled: Tensor | None = None,
                  grid: Tensor | None = None) -> list[str]:
        from .vocab import EOS_ID

        src_ids = self.src_vocab.encode(list(source_tokens)) + [EOS_ID]
        out_ids = beam_search(self.model, src_ids, pooled=pooled, grid=grid,
                              beam_size=self.beam_size, max_len=self.max_len)
        return self.tgt_vocab.decode(out_ids)

    @property
    def fusion_mode(self) -> str:
        return self.model.config.fusion_mode


def _features_for(store: FeatureStore | None, image_id: str | None,
                  fusion_mode: str) -> tuple[Tensor | None, Tensor | None]:
    if fusion_mode == "none":
        return None, None
    if store is None or image_id is None:
        raise ValueError(f"fusion mode {fusion_mode!r} needs an image and a store")
    if fusion_mode == "gated":
        pooled = torch.from_numpy(store.load_pooled(image_id)).unsqueeze(0)
        return pooled, None
    grid = torch.from_numpy(store.load(image_id).grid).unsqueeze(0)
    return None, grid


def decode_corpus(translator: Translator, examples: Sequence[ParallelExample],
                  store: FeatureStore | None = None) -> list[list[str]]:
    hypotheses = []
    for ex in examples:
        try:
            pooled, grid = _features_for(store, ex.image_id,
                                         translator.fusion_mode)
            hypotheses.append(translator.translate(ex.source, pooled, grid))
        except Exception as exc:
            raise RuntimeError(f"decoding failed on example {ex.id!r}") from exc
    return hypotheses


@dataclass
class EvalReport:
    """Congruent vs incongruent metrics with per-seed breakdown."""

    bleu_congruent: float
    gender_acc_congruent: float
    bleu_incongruent: float
    gender_acc_incongruent: float
    awareness_bleu: float
    awareness_gender: float
    n_seeds: int
    per_seed: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "bleu_congruent": self.bleu_congruent,
            "gender_acc_congruent": self.gender_acc_congruent,
            "bleu_incongruent": self.bleu_incongruent,
            "gender_acc_incongruent": self.gender_acc_incongruent,
            "awareness_bleu": self.awareness_bleu,
            "awareness_gender": self.awareness_gender,
            "n_seeds": self.n_seeds,
            "per_seed": self.per_seed,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def render_table(self, label: str = "model") -> str:
        """Human-readable summary: congruent value with parenthesized drop."""
        lines = [
            f"{label:<24}{'BLEU':>18}{'Gender Acc':>22}",
            f"{'congruent (drop)':<24}"
            f"{self.bleu_congruent:>11.2f} ({self.awareness_bleu:+.2f})"
            f"{self.gender_acc_congruent * 100:>13.1f}% "
            f"({self.awareness_gender * 100:+.1f}%)",
            f"{'incongruent mean':<24}"
            f"{self.bleu_incongruent:>11.2f}        "
            f"{self.gender_acc_incongruent * 100:>13.1f}%",
            f"{'shuffle seeds':<24}{self.n_seeds:>11d}",
        ]
        return "\n".join(lines)


def adversarial_eval(translator: Translator,
                     examples: Sequence[ParallelExample],
                     store: FeatureStore | None,
                     seeds: Sequence[int],
                     ) -> tuple[EvalReport, dict[str, list[list[str]]]]:
    """Decode congruent once, then once per shuffle seed, and report deltas.

    Returns the report plus the raw hypotheses keyed "congruent" and
    "seed<k>" so callers can persist them.
    """
    if not seeds:
        raise ValueError("need at least one shuffle seed")
    references = [list(ex.target) for ex in examples]

    hyps_congruent = decode_corpus(translator, examples, store)
    bleu_c = bleu(hyps_congruent, references)
    gender_c = gender_accuracy(hyps_congruent, references)
    all_hyps = {"congruent": hyps_congruent}

    per_seed = []
    for seed in seeds:
        shuffled = shuffle_images(examples, seed)
        hyps = decode_corpus(translator, shuffled, store)
        all_hyps[f"seed{seed}"] = hyps
        per_seed.append({
            "seed": seed,
            "bleu": bleu(hyps, references),
            "gender_accuracy": gender_accuracy(hyps, references),
        })

    bleu_i = sum(r["bleu"] for r in per_seed) / len(per_seed)
    gender_i = sum(r["gender_accuracy"] for r in per_seed) / len(per_seed)
    report = EvalReport(
        bleu_congruent=bleu_c,
        gender_acc_congruent=gender_c,
        bleu_incongruent=bleu_i,
        gender_acc_incongruent=gender_i,
        awareness_bleu=image_awareness(bleu_c, bleu_i),
        awareness_gender=image_awareness(gender_c, gender_i),
        n_seeds=len(seeds),
        per_seed=per_seed,
    )
    return report, all_hyps
