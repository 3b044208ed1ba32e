"""Desk-scale disambiguation experiment on the synthetic ambiguous corpus.

Builds a neutralized pseudo-parallel corpus with the mock engine, trains the
text-only, gated-fusion, and concatenation models on it, and runs the
incongruent-image evaluation on the test split. The expected pattern: the
text-only model guesses pronoun gender at chance, the multimodal models
recover it from congruent images and collapse back to chance when images
are shuffled.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import torch

from .corpus import ParallelExample, default_lexicon, filter_gendered, split
from .evaluation import EvalReport, Translator, adversarial_eval
from .feature_store import FeatureStore
from .models import ModelConfig, TranslationModel, load_model
from .mt_client import MockNeutralizingEngine, TranslationCache, build_pseudo_parallel
from .synthdata import make_synthetic_captions, populate_feature_store
from .trainer import TrainConfig, TrainResult, average_checkpoint_files, train
from .vocab import Vocab

logger = logging.getLogger(__name__)


@dataclass
class ExperimentConfig:
    n_examples: int = 2000
    n_val: int = 200
    n_test: int = 200
    seed: int = 13
    noise_sigma: float = 0.1
    vocab_min_count: int = 2
    # Toy-scale model/optimizer settings; architecture defaults stay at the
    # full configuration, these just keep the experiment CPU-friendly.
    d_model: int = 64
    d_ffn: int = 128
    n_layers: int = 2
    n_heads: int = 2
    model_dropout: float = 0.1
    warmup_steps: int = 50
    lr_peak: float = 0.005
    max_tokens_per_batch: int = 1536
    max_epochs: int = 30
    patience: int = 6
    avg_last_k: int = 3
    beam_size: int = 5
    max_decode_len: int = 16
    shuffle_seeds: tuple[int, ...] = (1,)


@dataclass
class ExperimentData:
    train_set: list[ParallelExample]
    val_set: list[ParallelExample]
    test_set: list[ParallelExample]
    store: FeatureStore
    src_vocab: Vocab
    tgt_vocab: Vocab


def build_experiment_data(config: ExperimentConfig,
                          work_dir: str | Path) -> ExperimentData:
    work_dir = Path(work_dir)
    work_dir.mkdir(parents=True, exist_ok=True)

    captions, genders = make_synthetic_captions(config.n_examples, config.seed)
    captions = filter_gendered(captions, default_lexicon())
    cache = TranslationCache(work_dir / "translations.cache")
    examples = build_pseudo_parallel(captions, MockNeutralizingEngine(), cache)
    train_set, val_set, test_set = split(examples, config.n_val, config.n_test,
                                         config.seed)

    store = FeatureStore(work_dir / "features")
    needed = {ex.image_id: genders[ex.image_id] for ex in examples
              if ex.image_id is not None}
    populate_feature_store(store, needed, config.noise_sigma, config.seed)

    src_vocab = Vocab.build((ex.source for ex in train_set),
                            min_count=config.vocab_min_count)
    tgt_vocab = Vocab.build((ex.target for ex in train_set),
                            min_count=config.vocab_min_count)
    return ExperimentData(train_set, val_set, test_set, store,
                          src_vocab, tgt_vocab)


def train_variant(data: ExperimentData, config: ExperimentConfig,
                  fusion_mode: str, work_dir: str | Path
                  ) -> tuple[Path, TrainResult]:
    """Train one fusion variant and return the averaged-checkpoint path."""
    out_dir = Path(work_dir) / fusion_mode
    model_config = ModelConfig(
        src_vocab_size=len(data.src_vocab),
        tgt_vocab_size=len(data.tgt_vocab),
        fusion_mode=fusion_mode,
        n_enc_layers=config.n_layers, n_dec_layers=config.n_layers,
        n_heads=config.n_heads, d_model=config.d_model, d_ffn=config.d_ffn,
        dropout=config.model_dropout)
    train_config = TrainConfig(
        warmup_steps=config.warmup_steps, lr_peak=config.lr_peak,
        max_tokens_per_batch=config.max_tokens_per_batch,
        dropout=config.model_dropout,
        patience=config.patience, avg_last_k=config.avg_last_k,
        seed=config.seed, max_epochs=config.max_epochs)

    torch.manual_seed(config.seed)
    model = TranslationModel(model_config)
    store = data.store if fusion_mode != "none" else None
    result = train(model, data.train_set, data.val_set,
                   data.src_vocab, data.tgt_vocab, train_config,
                   out_dir, feature_store=store)

    final_path = out_dir / "final_model.pt"
    last_k = result.checkpoint_paths[-train_config.avg_last_k:]
    average_checkpoint_files(last_k, final_path)
    return final_path, result


def evaluate_variant(model_path: str | Path, data: ExperimentData,
                     config: ExperimentConfig) -> EvalReport:
    model, src_vocab, tgt_vocab = load_model(model_path)
    translator = Translator(model, src_vocab, tgt_vocab,
                            beam_size=config.beam_size,
                            max_len=config.max_decode_len)
    store = data.store if translator.fusion_mode != "none" else None
    report, _ = adversarial_eval(translator, data.test_set, store,
                                 list(config.shuffle_seeds))
    return report


def run_experiment(config: ExperimentConfig, work_dir: str | Path,
                   fusion_modes: tuple[str, ...] = ("none", "gated", "concat"),
                   ) -> dict[str, EvalReport]:
    """Train and evaluate the requested variants; returns reports by mode."""
    data = build_experiment_data(config, work_dir)
    logger.info("built corpus: %d train / %d val / %d test",
                len(data.train_set), len(data.val_set), len(data.test_set))
    reports = {}
    for mode in fusion_modes:
        model_path, result = train_variant(data, config, mode, work_dir)
        logger.info("%s: trained %d epochs (best %d)", mode,
                    result.epochs_run, result.best_epoch)
        reports[mode] = evaluate_variant(model_path, data, config)
        logger.info("%s:\n%s", mode, reports[mode].render_table(mode))
    return reports
