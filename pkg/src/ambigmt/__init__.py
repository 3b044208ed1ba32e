"""Gender-ambiguous multimodal translation: corpora, models, adversarial eval."""

__version__ = "0.1.0"
