"""Templated synthetic captions where only the image can reveal gender.

Every sentence carries a third-person pronoun; all other slots are sampled
independently of the gender label, so after the source side is neutralized
the text alone is uninformative about the pronoun and the paired synthetic
image is the only disambiguating signal.
"""

from __future__ import annotations

import random

import numpy as np

from .corpus import Caption
from .feature_store import FeatureStore, synth_features

VERBS = ("reads", "holds", "carries", "opens", "paints", "cleans", "finds", "moves")
OBJECTS = ("book", "cup", "map", "letter", "box", "phone", "ticket", "bag",
           "brush", "coat")
PLACES = ("in the park", "near the station", "at the market", "by the door",
          "in the kitchen", "at the beach", "on the street", "in the garden")
VERBS_POSSESSIVE = ("loses", "drops", "lifts", "wears")
DETERMINERS = ("a", "the")

_PRONOUN = {"male": "he", "female": "she"}
_POSSESSIVE = {"male": "his", "female": "her"}


def make_sentence(gender: str, rng: random.Random) -> str:
    if rng.random() < 0.5:
        return (f"{_PRONOUN[gender]} {rng.choice(VERBS)} {rng.choice(DETERMINERS)} "
                f"{rng.choice(OBJECTS)} {rng.choice(PLACES)}.")
    return (f"{_PRONOUN[gender]} {rng.choice(VERBS_POSSESSIVE)} "
            f"{_POSSESSIVE[gender]} {rng.choice(OBJECTS)}.")


def make_synthetic_captions(n: int, seed: int
                            ) -> tuple[list[Caption], dict[str, str]]:
    """Build n captions with unique images; returns (captions, image gender map)."""
    rng = random.Random(seed)
    captions = []
    genders: dict[str, str] = {}
    for i in range(n):
        gender = rng.choice(("male", "female"))
        image_id = f"img-{i:05d}"
        captions.append(Caption(id=f"synth-{i:05d}",
                                text=make_sentence(gender, rng),
                                image_id=image_id))
        genders[image_id] = gender
    return captions, genders


def populate_feature_store(store: FeatureStore, genders: dict[str, str],
                           noise_sigma: float, seed: int) -> None:
    """Fill a store with gender-encoding synthetic features, one per image."""
    rng = np.random.default_rng(seed)
    for image_id in sorted(genders):
        store.store(image_id, synth_features(genders[image_id], noise_sigma, rng))
