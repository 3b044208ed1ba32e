from ambigmt.corpus import default_lexicon, filter_gendered, tokenize
from ambigmt.evaluation import GenderClass, classify_gender
from ambigmt.feature_store import FeatureStore
from ambigmt.mt_client import MockNeutralizingEngine
from ambigmt.synthdata import make_synthetic_captions, populate_feature_store


def test_corpus_size_and_unique_ids():
    captions, genders = make_synthetic_captions(50, seed=1)
    assert len(captions) == 50
    assert len({c.id for c in captions}) == 50
    assert len(genders) == 50
    assert all(c.image_id in genders for c in captions)


def test_sentences_classify_as_their_label():
    captions, genders = make_synthetic_captions(80, seed=2)
    for caption in captions:
        expected = GenderClass(genders[caption.image_id])
        assert classify_gender(tokenize(caption.text)) is expected


def test_survives_gender_filter():
    captions, _ = make_synthetic_captions(40, seed=3)
    assert filter_gendered(captions, default_lexicon()) == captions


def test_neutralization_erases_gender():
    captions, _ = make_synthetic_captions(40, seed=4)
    engine = MockNeutralizingEngine()
    sources = engine.translate_many([c.text for c in captions], "en", "tr")
    for source in sources:
        assert classify_gender(source.split()) is GenderClass.UNDETERMINED


def test_generation_deterministic():
    assert make_synthetic_captions(30, seed=5) == make_synthetic_captions(30, seed=5)


def test_populate_store(tmp_path):
    _, genders = make_synthetic_captions(5, seed=6)
    store = FeatureStore(tmp_path / "store")
    populate_feature_store(store, genders, noise_sigma=0.0, seed=6)
    assert len(store) == 5
    for image_id, gender in genders.items():
        pooled = store.load_pooled(image_id)
        assert pooled[0] == (1.0 if gender == "male" else -1.0)
