import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ambigmt.evaluation import (EvalReport, GenderClass, MetricUndefinedError,
                                adversarial_eval, bleu, classify_gender,
                                gender_accuracy, image_awareness,
                                shuffle_images)
from ambigmt.feature_store import FeatureStore, synth_features

from conftest import example
from oracles import bleu_brute_force


class TestClassifyGender:
    def test_male(self):
        assert classify_gender(["he", "reads", "his", "book"]) is GenderClass.MALE

    def test_both_sets_undetermined(self):
        tokens = ["she", "gave", "her", "letter", "to", "him"]
        assert classify_gender(tokens) is GenderClass.UNDETERMINED

    def test_neither_set_undetermined(self):
        assert classify_gender(["a", "dog", "runs"]) is GenderClass.UNDETERMINED

    def test_female(self):
        assert classify_gender(["hers", "alone"]) is GenderClass.FEMALE


class TestGenderAccuracy:
    def test_mixed_reference_classes(self):
        refs = [["he", "sits"], ["she", "sits"], ["a", "dog"]]
        hyps = [["he", "x"], ["him", "x"], ["she", "x"]]
        # third pair excluded (ref undetermined); second wrong -> 1/2
        assert gender_accuracy(hyps, refs) == 0.5

    def test_perfect_agreement(self):
        refs = [["he", "a"], ["her", "b"]]
        assert gender_accuracy(refs, refs) == 1.0

    def test_undetermined_hypotheses_count_as_wrong(self):
        refs = [["he", "a"], ["she", "b"]]
        hyps = [["a", "b"], ["c", "d"]]
        assert gender_accuracy(hyps, refs) == 0.0

    def test_no_determinate_references_is_an_error(self):
        with pytest.raises(MetricUndefinedError):
            gender_accuracy([["he"]], [["dog"]])

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            gender_accuracy([["he"]], [])


class TestBleu:
    def test_perfect_match_is_100(self):
        hyps = [["the", "cat", "sat"], ["a", "dog", "ran", "away"]]
        assert bleu(hyps, hyps) == pytest.approx(100.0, abs=1e-9)

    def test_zero_unigram_overlap_is_0(self):
        assert bleu([["x", "y"]], [["a", "b"]]) == 0.0

    def test_cat_mat_single_pair_has_no_4gram_match(self):
        hyp = "the cat sat on the mat".split()
        ref = "the cat is on the mat".split()
        assert bleu([hyp], [ref]) == 0.0
        assert bleu_brute_force([hyp], [ref]) == 0.0

    def test_two_pair_corpus_matches_hand_ngram_table(self):
        hyps = ["the cat sat on the mat".split(),
                "there is a cat on the mat".split()]
        refs = ["the cat is on the mat".split(),
                "there is a cat on the mat".split()]
        # hand table: p1=12/13, p2=9/11, p3=6/9, p4=4/7, bp=1
        assert bleu(hyps, refs) == pytest.approx(73.23852725998859, abs=1e-9)

    def test_short_sentences_identity_still_100(self):
        hyps = [["hi"], ["there"]]
        assert bleu(hyps, hyps) == pytest.approx(100.0, abs=1e-9)

    def test_brevity_penalty_applied(self):
        hyp = [["the", "cat"]]
        ref = [["the", "cat", "sat", "down"]]
        # p1=1, p2=1, no higher orders; bp = exp(1 - 4/2)
        import math
        assert bleu(hyp, ref) == pytest.approx(100 * math.exp(-1.0), abs=1e-9)

    def test_corpus_order_invariance(self):
        hyps = [["a", "b"], ["c", "d", "e"], ["a", "a", "a"]]
        refs = [["a", "b"], ["c", "e", "e"], ["a", "a", "b"]]
        assert bleu(hyps, refs) == bleu(hyps[::-1], refs[::-1])

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            bleu([["a"]], [])

    def test_empty_reference_rejected(self):
        with pytest.raises(ValueError):
            bleu([["a"]], [[]])

    @given(st.integers(0, 10_000))
    @settings(max_examples=60, deadline=None)
    def test_agrees_with_brute_force_on_random_corpora(self, seed):
        rng = random.Random(seed)
        vocab = list("abcdefghij")
        n = rng.randint(1, 6)
        hyps = [[rng.choice(vocab) for _ in range(rng.randint(1, 8))]
                for _ in range(n)]
        refs = [[rng.choice(vocab) for _ in range(rng.randint(1, 8))]
                for _ in range(n)]
        assert bleu(hyps, refs) == pytest.approx(
            bleu_brute_force(hyps, refs), abs=1e-9)


class TestShuffleImages:
    def _examples(self, n):
        return [example(f"e{i}", "o reads", "he reads", image_id=f"img-{i}")
                for i in range(n)]

    def test_two_examples_swap(self):
        shuffled = shuffle_images(self._examples(2), seed=0)
        assert [ex.image_id for ex in shuffled] == ["img-1", "img-0"]

    def test_same_seed_same_permutation(self):
        examples = self._examples(9)
        first = shuffle_images(examples, seed=5)
        second = shuffle_images(examples, seed=5)
        assert first == second

    def test_fewer_than_two_images_rejected(self):
        examples = [example("e0", "o", "he", image_id="img-0"),
                    example("e1", "o", "he")]
        with pytest.raises(ValueError):
            shuffle_images(examples, seed=0)

    def test_examples_without_images_untouched(self):
        examples = self._examples(3)
        examples.insert(1, example("bare", "o waves", "she waves"))
        shuffled = shuffle_images(examples, seed=2)
        assert shuffled[1].image_id is None
        assert shuffled[1].id == "bare"

    @given(st.integers(2, 40), st.integers(0, 2 ** 31))
    @settings(max_examples=60)
    def test_derangement_and_bijectivity(self, n, seed):
        examples = self._examples(n)
        shuffled = shuffle_images(examples, seed)
        before = [ex.image_id for ex in examples]
        after = [ex.image_id for ex in shuffled]
        assert sorted(before) == sorted(after)  # permutation
        assert all(a != b for a, b in zip(before, after))  # no fixed points
        assert [ex.target for ex in shuffled] == [ex.target for ex in examples]


class TestImageAwareness:
    def test_reference_bleu_drop(self):
        assert image_awareness(36.68, 34.97) == pytest.approx(1.71, abs=1e-9)

    def test_no_drop(self):
        assert image_awareness(7.5, 7.5) == 0.0

    def test_reference_gender_drop(self):
        assert image_awareness(80.9, 64.4) == pytest.approx(16.5, abs=1e-9)


class _EchoTranslator:
    """Ignores features: a stand-in for the text-only model."""

    fusion_mode = "none"

    def __init__(self, outputs):
        self.outputs = {tuple(k): v for k, v in outputs.items()}

    def translate(self, source_tokens, pooled=None, grid=None):
        return list(self.outputs[tuple(source_tokens)])


class _ImageReadingTranslator:
    """Emits the pronoun encoded in the pooled feature's first coordinate."""

    fusion_mode = "gated"

    def translate(self, source_tokens, pooled=None, grid=None):
        pronoun = "he" if float(pooled[0, 0]) > 0 else "she"
        return [pronoun] + [t for t in source_tokens if t != "o"]


@pytest.fixture
def gender_store(tmp_path):
    store = FeatureStore(tmp_path / "store")
    rng = np.random.default_rng(0)
    for image_id, gender in [("img-m1", "male"), ("img-f1", "female"),
                             ("img-m2", "male")]:
        store.store(image_id, synth_features(gender, 0.0, rng))
    return store


ADV_EXAMPLES = [
    example("e1", "o reads a book", "he reads a book", image_id="img-m1"),
    example("e2", "o holds a cup", "she holds a cup", image_id="img-f1"),
    example("e3", "o finds a map", "he finds a map", image_id="img-m2"),
]


class TestAdversarialEval:
    def test_text_only_awareness_exactly_zero(self):
        outputs = {ex.source: list(ex.target) for ex in ADV_EXAMPLES}
        translator = _EchoTranslator(outputs)
        report, hyps = adversarial_eval(translator, ADV_EXAMPLES, None,
                                        seeds=[1, 2])
        assert report.awareness_bleu == 0.0
        assert report.awareness_gender == 0.0
        assert hyps["congruent"] == hyps["seed1"] == hyps["seed2"]

    def test_report_matches_manual_metric_calls(self, gender_store):
        translator = _ImageReadingTranslator()
        report, hyps = adversarial_eval(translator, ADV_EXAMPLES,
                                        gender_store, seeds=[3])
        refs = [list(ex.target) for ex in ADV_EXAMPLES]
        assert report.bleu_congruent == pytest.approx(
            bleu(hyps["congruent"], refs), abs=1e-12)
        assert report.gender_acc_congruent == pytest.approx(
            gender_accuracy(hyps["congruent"], refs), abs=1e-12)
        assert report.bleu_incongruent == pytest.approx(
            bleu(hyps["seed3"], refs), abs=1e-12)
        assert report.awareness_gender == pytest.approx(
            report.gender_acc_congruent - report.gender_acc_incongruent,
            abs=1e-12)
        # congruent images encode the true gender, so accuracy is perfect
        assert report.gender_acc_congruent == 1.0

    def test_seed_count_recorded(self, gender_store):
        report, hyps = adversarial_eval(_ImageReadingTranslator(), ADV_EXAMPLES,
                                        gender_store, seeds=[1, 2, 3])
        assert report.n_seeds == 3
        assert len(report.per_seed) == 3
        assert {f"seed{s}" for s in (1, 2, 3)} <= set(hyps)

    def test_empty_seed_list_rejected(self):
        with pytest.raises(ValueError):
            adversarial_eval(_ImageReadingTranslator(), ADV_EXAMPLES, None, [])

    def test_report_serialization_round_trip(self):
        report = EvalReport(bleu_congruent=36.68, gender_acc_congruent=0.809,
                            bleu_incongruent=34.97,
                            gender_acc_incongruent=0.644,
                            awareness_bleu=1.71, awareness_gender=0.165,
                            n_seeds=5, per_seed=[])
        rendered = report.render_table("gated")
        assert "36.68" in rendered and "80.9%" in rendered
        assert "+1.71" in rendered
        assert report.to_dict()["n_seeds"] == 5
