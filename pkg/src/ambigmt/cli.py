"""Command-line entry point: build-dataset / train / evaluate / validate-store.

Options may also come from a JSON config file (--config); explicitly passed
flags win over the file, which wins over built-in defaults. Outputs land in
an explicit --out directory or, by default, in a fresh run directory named
by UTC timestamp and seed. Exit codes: 0 success, 1 runtime failure,
2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path

import torch

from .corpus import (GenderLexicon, corpus_stats, filter_gendered,
                     detect_skewed_professions, read_captions, read_examples,
                     read_lexicon_file, split, write_examples)
from .corruption import CorruptionConfig
from .evaluation import Translator, adversarial_eval
from .feature_store import FeatureStore
from .models import ModelConfig, TranslationModel, load_model
from .mt_client import (ClientConfig, HttpTranslationEngine,
                        MockNeutralizingEngine, TranslationCache,
                        build_pseudo_parallel)
from .trainer import TrainConfig, average_checkpoint_files, train
from .vocab import Vocab

logger = logging.getLogger(__name__)


class UsageError(Exception):
    pass


def _resolve_out_dir(args) -> Path:
    if args.out:
        out = Path(args.out)
    else:
        stamp = datetime.now(timezone.utc).strftime("%Y%m%d-%H%M%S")
        out = Path(args.out_root) / f"run-{stamp}-seed{args.seed}"
    out.mkdir(parents=True, exist_ok=True)
    return out


def _require_files(*paths: str | None) -> None:
    for p in paths:
        if p is not None and not Path(p).exists():
            raise UsageError(f"path does not exist: {p}")


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")


def cmd_build_dataset(args) -> int:
    _require_files(args.captions, args.lexicon, args.professions,
                   args.skew_candidates)
    out_dir = _resolve_out_dir(args)

    captions = read_captions(args.captions)
    lexicon = GenderLexicon.from_files(args.lexicon, args.professions)

    if args.skew_candidates:
        candidates = read_lexicon_file(args.skew_candidates)
        detected = detect_skewed_professions(captions, candidates,
                                             args.skew_threshold)
        logger.info("detected %d skewed profession phrases", len(detected))
        lexicon = GenderLexicon(
            gendered_nouns=lexicon.gendered_nouns,
            skewed_professions=lexicon.skewed_professions | frozenset(detected))

    filtered = filter_gendered(captions, lexicon)
    logger.info("kept %d of %d captions after gender filtering",
                len(filtered), len(captions))

    if args.engine == "mock":
        engine = MockNeutralizingEngine()
    else:
        if not args.engine_url:
            raise UsageError("--engine http requires --engine-url")
        engine = HttpTranslationEngine(args.engine_url)
    cache_path = Path(args.cache) if args.cache else out_dir / "translations.cache"
    cache = TranslationCache(cache_path)
    client_config = ClientConfig(chunk_size=args.chunk_size)

    examples = build_pseudo_parallel(filtered, engine, cache, client_config,
                                     src_lang=args.src_lang,
                                     tgt_lang=args.tgt_lang)
    built_ids = {ex.id for ex in examples}
    dropped = [c.id for c in filtered if c.id not in built_ids]
    (out_dir / "drops.log").write_text(
        "".join(f"{i}\n" for i in dropped), encoding="utf-8")

    train_set, val_set, test_set = split(examples, args.n_val, args.n_test,
                                         args.seed)
    write_examples(out_dir / "train.jsonl", train_set)
    write_examples(out_dir / "val.jsonl", val_set)
    write_examples(out_dir / "test.jsonl", test_set)
    _write_json(out_dir / "stats.json", {
        "total": corpus_stats(examples, lexicon).to_dict(),
        "train": corpus_stats(train_set, lexicon).to_dict(),
        "val": corpus_stats(val_set, lexicon).to_dict(),
        "test": corpus_stats(test_set, lexicon).to_dict(),
        "n_filtered_out": len(captions) - len(filtered),
        "n_dropped_translations": len(dropped),
    })
    print(f"wrote dataset to {out_dir}")
    return 0


def cmd_train(args) -> int:
    _require_files(args.train, args.val)
    if args.fusion != "none":
        if not args.features:
            raise UsageError(f"--fusion {args.fusion} requires --features")
        _require_files(args.features)
    out_dir = _resolve_out_dir(args)

    train_set = read_examples(args.train)
    val_set = read_examples(args.val)
    store = FeatureStore(args.features) if args.features else None

    src_vocab = Vocab.build((ex.source for ex in train_set),
                            min_count=args.min_count)
    tgt_vocab = Vocab.build((ex.target for ex in train_set),
                            min_count=args.min_count)

    model_config = ModelConfig(
        src_vocab_size=len(src_vocab), tgt_vocab_size=len(tgt_vocab),
        fusion_mode=args.fusion, n_enc_layers=args.enc_layers,
        n_dec_layers=args.dec_layers, n_heads=args.heads,
        d_model=args.d_model, d_ffn=args.d_ffn,
        max_positions=args.max_positions, dropout=args.dropout)
    train_config = TrainConfig(
        warmup_steps=args.warmup_steps, lr_init=args.lr_init,
        lr_peak=args.lr_peak, max_tokens_per_batch=args.max_tokens,
        dropout=args.dropout, label_smoothing=args.label_smoothing,
        patience=args.patience, avg_last_k=args.avg_last_k,
        seed=args.seed, max_epochs=args.max_epochs,
        early_stop_metric=args.early_stop_metric)
    corruption = (CorruptionConfig(p=args.word_dropout, seed=args.seed)
                  if args.word_dropout > 0 else None)

    torch.manual_seed(args.seed)
    model = TranslationModel(model_config)
    result = train(model, train_set, val_set, src_vocab, tgt_vocab,
                   train_config, out_dir, feature_store=store,
                   corruption=corruption)

    final_path = out_dir / "final_model.pt"
    last_k = result.checkpoint_paths[-args.avg_last_k:]
    average_checkpoint_files(last_k, final_path)
    print(f"trained {result.epochs_run} epochs "
          f"(best epoch {result.best_epoch}); averaged last {len(last_k)} "
          f"checkpoints into {final_path}")
    return 0


def cmd_evaluate(args) -> int:
    _require_files(args.model, args.test)
    out_dir = _resolve_out_dir(args)

    model, src_vocab, tgt_vocab = load_model(args.model)
    test_set = read_examples(args.test)
    store = None
    if model.config.fusion_mode != "none":
        if not args.features:
            raise UsageError(
                f"model with fusion {model.config.fusion_mode!r} requires --features")
        _require_files(args.features)
        store = FeatureStore(args.features)

    seeds = args.seeds if args.seeds else [args.shuffle_seed]
    translator = Translator(model, src_vocab, tgt_vocab,
                            beam_size=args.beam_size, max_len=args.max_len)
    report, hyps = adversarial_eval(translator, test_set, store, seeds)

    _write_json(out_dir / "report.json", report.to_dict())
    (out_dir / "report.txt").write_text(
        report.render_table(model.config.fusion_mode) + "\n", encoding="utf-8")
    for name, hyp_list in hyps.items():
        (out_dir / f"hyps_{name}.txt").write_text(
            "".join(" ".join(h) + "\n" for h in hyp_list), encoding="utf-8")

    if args.metric in ("bleu", "all"):
        print(f"BLEU {report.bleu_congruent:.2f} "
              f"(awareness {report.awareness_bleu:+.2f})")
    if args.metric in ("gender", "all"):
        print(f"gender accuracy {report.gender_acc_congruent * 100:.1f}% "
              f"(awareness {report.awareness_gender * 100:+.1f}%)")
    return 0


def cmd_validate_store(args) -> int:
    _require_files(args.features)
    store = FeatureStore(args.features)
    problems = []
    if args.corpus:
        _require_files(args.corpus)
        examples = read_examples(args.corpus)
        missing = store.missing(ex.image_id for ex in examples)
        problems += [f"missing features: {i}" for i in missing]
    problems += [f"corrupt record: {i}" for i in store.verify()]
    if problems:
        for p in problems:
            print(p, file=sys.stderr)
        return 1
    print(f"store {args.features} OK ({len(store)} images)")
    return 0


def build_parser(config: dict | None = None) -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ambigmt",
        description="Gender-ambiguous multimodal translation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    subcommands: list[argparse.ArgumentParser] = []

    def add_common(p):
        subcommands.append(p)
        p.add_argument("--config", help="JSON config file; flags override it")
        p.add_argument("--seed", type=int, default=1)
        p.add_argument("--out", help="exact output directory")
        p.add_argument("--out-root", default=".",
                       help="parent for timestamp+seed run directories")

    p = sub.add_parser("build-dataset",
                       help="filter, back-translate, and split a caption corpus")
    add_common(p)
    p.add_argument("--captions", required=True, help="caption JSONL file")
    p.add_argument("--lexicon", required=True, help="gendered-noun list")
    p.add_argument("--professions", help="skewed-profession list")
    p.add_argument("--skew-candidates",
                   help="candidate phrases to test for gender skew")
    p.add_argument("--skew-threshold", type=float, default=0.95)
    p.add_argument("--engine", choices=("mock", "http"), default="mock")
    p.add_argument("--engine-url")
    p.add_argument("--cache", help="translation cache file (resumable)")
    p.add_argument("--chunk-size", type=int, default=32)
    p.add_argument("--src-lang", default="en")
    p.add_argument("--tgt-lang", default="tr")
    p.add_argument("--n-val", type=int, default=1000)
    p.add_argument("--n-test", type=int, default=1000)
    p.set_defaults(func=cmd_build_dataset)

    p = sub.add_parser("train", help="train one model variant")
    add_common(p)
    p.add_argument("--train", required=True)
    p.add_argument("--val", required=True)
    p.add_argument("--fusion", choices=("none", "gated", "concat"),
                   default="none")
    p.add_argument("--features", help="feature store directory")
    p.add_argument("--word-dropout", type=float, default=0.0)
    p.add_argument("--min-count", type=int, default=2)
    p.add_argument("--enc-layers", type=int, default=4)
    p.add_argument("--dec-layers", type=int, default=4)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--d-model", type=int, default=128)
    p.add_argument("--d-ffn", type=int, default=256)
    p.add_argument("--max-positions", type=int, default=256)
    p.add_argument("--dropout", type=float, default=0.3)
    p.add_argument("--warmup-steps", type=int, default=2000)
    p.add_argument("--lr-init", type=float, default=1e-7)
    p.add_argument("--lr-peak", type=float, default=0.005)
    p.add_argument("--max-tokens", type=int, default=4096)
    p.add_argument("--label-smoothing", type=float, default=0.1)
    p.add_argument("--patience", type=int, default=10)
    p.add_argument("--avg-last-k", type=int, default=10)
    p.add_argument("--max-epochs", type=int, default=100)
    p.add_argument("--early-stop-metric", choices=("loss", "bleu"),
                   default="loss")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate",
                       help="congruent + shuffled-image evaluation")
    add_common(p)
    p.add_argument("--model", required=True, help="checkpoint file")
    p.add_argument("--test", required=True)
    p.add_argument("--features")
    p.add_argument("--seeds", type=int, nargs="+",
                   help="shuffle seeds (one incongruent decode each)")
    p.add_argument("--shuffle-seed", type=int, default=1,
                   help="single shuffle seed when --seeds is not given")
    p.add_argument("--metric", choices=("bleu", "gender", "all"), default="all")
    p.add_argument("--beam-size", type=int, default=5)
    p.add_argument("--max-len", type=int, default=50)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("validate-store",
                       help="check a feature store against a corpus")
    add_common(p)
    p.add_argument("--features", required=True)
    p.add_argument("--corpus", help="JSONL corpus whose image ids must resolve")
    p.set_defaults(func=cmd_validate_store)

    if config:
        # config supplies defaults only; explicit flags still win
        for command in subcommands:
            dests = {a.dest for a in command._actions}
            command.set_defaults(**{k.replace("-", "_"): v
                                    for k, v in config.items()
                                    if k.replace("-", "_") in dests})
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    logging.basicConfig(level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")

    config = None
    if "--config" in argv:
        config_path = argv[argv.index("--config") + 1]
        try:
            config = json.loads(Path(config_path).read_text(encoding="utf-8"))
        except OSError as exc:
            print(f"cannot read config file: {exc}", file=sys.stderr)
            return 2
    parser = build_parser(config)

    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse handles usage errors itself
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 2
    except Exception as exc:  # runtime failure -> exit 1 with a message
        logger.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
