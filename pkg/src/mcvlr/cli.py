"""Command-line entry point wiring all modules into reproducible pipelines.

Commands: synth, build-vocab, tokenize, train, eval, fewshot, overlap.
Every command writes its outputs under one directory together with a
manifest recording inputs, resolved config hash, seed and artifact
checksums, so any run can be reproduced from its manifest alone.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.
If the MCVLR_OUT environment variable is set, relative output paths are
resolved under it.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import datasets, evaluation, training
from .encoders import PrecomputedFeatureStore, SyntheticEncoderPair
from .errors import DataError, NumericError
from .fusion import FusionModel
from .token_retrieval import (
    Vocabulary, WordlistTagger, build_vocabulary, tokenize_video,
    vocabulary_from_wordlist,
)

log = logging.getLogger("mcvlr")


def _resolve_out(path: str) -> Path:
    root = os.environ.get("MCVLR_OUT")
    p = Path(path)
    if root and not p.is_absolute():
        p = Path(root) / p
    return p


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(out_dir: Path, command: str, inputs: dict, config_hash: str,
                    seed: int | None, artifacts: list[Path]) -> None:
    manifest = {
        "command": command,
        "inputs": inputs,
        "config_hash": config_hash,
        "seed": seed,
        "artifacts": {
            str(p.relative_to(out_dir)): _sha256(p)
            for p in sorted(artifacts)
        },
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=1) + "\n", encoding="utf-8"
    )


def _load_encoder(path: Path) -> SyntheticEncoderPair:
    meta = json.loads(path.read_text(encoding="utf-8"))
    enc = SyntheticEncoderPair(dim=meta["dim"], seed=meta["seed"],
                               noise_sigma=meta.get("noise_sigma", 0.0))
    return enc


class _DataDir:
    """Conventional layout written by `synth`: train/test records, a feature
    store, the corpus sentences and the frozen word-encoder description."""

    def __init__(self, root: Path):
        self.root = root
        self.train = root / "train.jsonl"
        self.test = root / "test.jsonl"
        self.corpus = root / "corpus.txt"
        self.features = root / "features"
        self.encoder_meta = root / "encoder.json"
        self.vocab = root / "vocab"

    def feature_store(self) -> PrecomputedFeatureStore:
        return PrecomputedFeatureStore(self.features)

    def word_encoder(self) -> SyntheticEncoderPair:
        if not self.encoder_meta.exists():
            raise DataError(f"missing {self.encoder_meta}")
        return _load_encoder(self.encoder_meta)

    def vocabulary(self) -> Vocabulary | None:
        return Vocabulary.load(self.vocab) if self.vocab.exists() else None


def cmd_synth(args) -> int:
    out = _resolve_out(args.out)
    out.mkdir(parents=True, exist_ok=True)
    spec_dict = json.loads(Path(args.spec).read_text(encoding="utf-8")) if args.spec else {}
    spec = datasets.SyntheticSpec(**spec_dict)
    data = datasets.generate_synthetic(spec)
    d = _DataDir(out)
    datasets.save_dataset(data.train, d.train)
    datasets.save_dataset(data.test, d.test)
    d.corpus.write_text("\n".join(data.corpus_sentences) + "\n", encoding="utf-8")
    features = {rec.video_id: data.encoder.encode_video(rec.video_id).data
                for rec in data.train + data.test}
    PrecomputedFeatureStore.write(d.features, features)
    d.encoder_meta.write_text(json.dumps(
        {"dim": spec.dim, "seed": spec.seed, "noise_sigma": spec.noise_sigma},
        sort_keys=True) + "\n", encoding="utf-8")
    (out / "answers.txt").write_text("\n".join(data.answer_words) + "\n", encoding="utf-8")
    artifacts = [d.train, d.test, d.corpus, d.encoder_meta, out / "answers.txt",
                 *sorted(d.features.glob("*"))]
    spec_hash = hashlib.sha256(json.dumps(asdict(spec), sort_keys=True).encode()).hexdigest()[:16]
    _write_manifest(out, "synth", {"spec": args.spec or "(defaults)"},
                    spec_hash, spec.seed, artifacts)
    print(f"synth: {len(data.train)} train / {len(data.test)} test records -> {out}")
    return 0


def cmd_build_vocab(args) -> int:
    out = _resolve_out(args.out)
    out.mkdir(parents=True, exist_ok=True)
    encoder = _load_encoder(Path(args.encoder))
    if args.wordlist:
        vocab = vocabulary_from_wordlist(args.wordlist, encoder)
    else:
        sentences = [l for l in Path(args.corpus).read_text(encoding="utf-8").splitlines()
                     if l.strip()]
        vocab = build_vocabulary(sentences, WordlistTagger(), encoder)
    vocab.save(out)
    artifacts = [out / "words.txt", out / "source.txt", out / "embeddings.npy",
                 out / "embeddings.keys.txt"]
    _write_manifest(out, "build-vocab",
                    {"corpus": args.corpus, "wordlist": args.wordlist,
                     "encoder": args.encoder},
                    "", None, [p for p in artifacts if p.exists()])
    print(f"build-vocab: {len(vocab)} words ({vocab.source}) -> {out}")
    return 0


def cmd_tokenize(args) -> int:
    out = _resolve_out(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    store = PrecomputedFeatureStore(Path(args.features))
    vocab = Vocabulary.load(Path(args.vocab))
    with out.open("w", encoding="utf-8") as f:
        for vid in store.video_ids():
            tok = tokenize_video(store.encode_video(vid), vocab, k=args.k,
                                 kernel=args.kernel, max_segments=args.max_segments)
            f.write(json.dumps({
                "video_id": vid,
                "segments": [{"index": s.segment_index,
                              "tokens": [[w, round(sc, 6)] for w, sc in s.entries]}
                             for s in tok.per_segment],
                "pooled": list(tok.pooled),
            }, sort_keys=True) + "\n")
    cfg_hash = hashlib.sha256(
        f"k={args.k},kernel={args.kernel},max={args.max_segments}".encode()
    ).hexdigest()[:16]
    _write_manifest(out.parent, "tokenize",
                    {"features": args.features, "vocab": args.vocab,
                     "k": args.k, "kernel": args.kernel},
                    cfg_hash, None, [out])
    print(f"tokenize: {len(store.video_ids())} videos -> {out}")
    return 0


def _resolve_train_config(args) -> training.TrainConfig:
    cfg_dict = training.TrainConfig().to_dict()
    if args.config:
        cfg_dict.update(json.loads(Path(args.config).read_text(encoding="utf-8")))
    for flag in ("variant", "task", "epochs", "batch_size", "learning_rate", "seed",
                 "fewshot_fraction", "k", "pool_kernel", "max_segments"):
        value = getattr(args, flag, None)
        if value is not None:
            cfg_dict[flag] = value
    cfg = training.TrainConfig.from_dict(cfg_dict)
    print(f"resolved config (hash {cfg.hash()}): {json.dumps(cfg.to_dict(), sort_keys=True)}")
    return cfg


def cmd_train(args) -> int:
    out = _resolve_out(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = _resolve_train_config(args)
    d = _DataDir(Path(args.data))
    if cfg.task == "openqa":
        records = datasets.load_dataset(d.train, "openqa")
    else:
        records = datasets.load_dataset(d.train, "retrieval")
    store = d.feature_store()
    vocab = d.vocabulary()
    if vocab is None and cfg.variant.uses_tokens:
        raise DataError(f"variant {cfg.variant.value} needs {d.vocab} (run build-vocab)")
    corpus_sentences = [l for l in d.corpus.read_text(encoding="utf-8").splitlines()
                        if l.strip()]
    model = training.build_model(cfg, corpus_sentences, store.dim)
    run = training.train(model, records, cfg, store, vocab)
    model.save_checkpoint(out / "checkpoint")
    cfg.save(out / "config.json")
    run.append_to(out / "runs.jsonl")
    # runs.jsonl carries wall-clock timing and is deliberately left out of
    # the checksummed artifacts so identical reruns produce identical manifests
    artifacts = [out / "config.json", *sorted((out / "checkpoint").glob("*"))]
    _write_manifest(out, "train", {"data": args.data, "config": args.config},
                    cfg.hash(), cfg.seed, artifacts)
    print(f"train: final epoch loss {run.per_epoch_loss[-1]:.4f} -> {out}")
    return 0


def cmd_eval(args) -> int:
    report_path = _resolve_out(args.report)
    report_path.parent.mkdir(parents=True, exist_ok=True)
    checkpoint = Path(args.checkpoint)
    model = FusionModel.load_checkpoint(checkpoint / "checkpoint"
                                        if (checkpoint / "checkpoint").exists() else checkpoint)
    cfg_path = checkpoint / "config.json"
    cfg = training.TrainConfig.load(cfg_path) if cfg_path.exists() else training.TrainConfig(
        variant=model.variant)
    d = _DataDir(Path(args.data))
    store = d.feature_store()
    vocab = d.vocabulary()
    split = d.test if args.split == "test" else d.train
    reports = []
    if args.task == "openqa":
        records = datasets.load_dataset(split, "openqa")
        train_records = datasets.load_dataset(d.train, "openqa")
        corpus = evaluation.AnswerCorpus.from_records(train_records)
        acc = training.evaluate_open_ended(model, records, store, vocab, cfg, corpus,
                                           credit_rule=args.credit_rule)
        reports.append(evaluation.EvalReport("open_ended_accuracy", acc,
                                             len(records), cfg.hash()))
    elif args.task == "mcqa":
        records = datasets.load_dataset(split, "mcqa")
        acc = training.evaluate_multiple_choice(model, records, store, vocab, cfg)
        reports.append(evaluation.EvalReport("multiple_choice_accuracy", acc,
                                             len(records), cfg.hash()))
    else:
        records = datasets.load_dataset(split, "retrieval")
        metrics = training.evaluate_retrieval(model, records, store, vocab, cfg)
        reports = [evaluation.EvalReport(f"retrieval_{name}", value, len(records), cfg.hash())
                   for name, value in metrics.items()]
    evaluation.write_reports(reports, report_path)
    for r in reports:
        print(f"eval: {r.metric} = {r.value:.4f} over {r.sample_count} samples")
    return 0


def cmd_fewshot(args) -> int:
    out = _resolve_out(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    records = datasets.load_dataset(Path(args.data), args.task)
    subset = training.fewshot_subsample(records, args.fraction, args.seed)
    datasets.save_dataset(subset, out)
    _write_manifest(out.parent, "fewshot",
                    {"data": args.data, "fraction": args.fraction},
                    "", args.seed, [out])
    print(f"fewshot: {len(subset)}/{len(records)} records -> {out}")
    return 0


def cmd_overlap(args) -> int:
    records = datasets.load_dataset(_DataDir(Path(args.data)).test
                                    if args.split == "test"
                                    else _DataDir(Path(args.data)).train, "openqa")
    tokens_by_video = {}
    with Path(args.tokens).open(encoding="utf-8") as f:
        for line in f:
            payload = json.loads(line)
            tokens_by_video[payload["video_id"]] = payload["pooled"]
    proportion = evaluation.overlap_statistic(records, tokens_by_video)
    print(f"overlap: {proportion:.4f} of {len(records)} samples share >= 1 "
          "answer word with retrieved tokens")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mcvlr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the synthetic planted-signal dataset")
    p.add_argument("--spec", help="JSON file of synthetic spec fields (defaults otherwise)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("build-vocab", help="build the answer-word vocabulary")
    p.add_argument("--corpus", help="sentence-per-line corpus file")
    p.add_argument("--wordlist", help="external newline-delimited word list instead of a corpus")
    p.add_argument("--encoder", required=True, help="frozen word-encoder description (encoder.json)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_vocab)

    p = sub.add_parser("tokenize", help="retrieve and pool text tokens per video")
    p.add_argument("--features", required=True, help="feature store directory")
    p.add_argument("--vocab", required=True, help="vocabulary directory")
    p.add_argument("--k", type=int, default=15)
    p.add_argument("--kernel", type=int, default=5)
    p.add_argument("--max-segments", type=int, default=20, dest="max_segments")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_tokenize)

    p = sub.add_parser("train", help="train one fusion variant")
    p.add_argument("--config", help="JSON config file; flags override it")
    p.add_argument("--data", required=True, help="data directory (synth layout)")
    p.add_argument("--out", required=True)
    p.add_argument("--variant", choices=[v.value for v in training.FusionVariant])
    p.add_argument("--task", choices=["openqa", "retrieval"])
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--learning-rate", type=float, dest="learning_rate")
    p.add_argument("--seed", type=int)
    p.add_argument("--fewshot-fraction", type=float, dest="fewshot_fraction")
    p.add_argument("--k", type=int)
    p.add_argument("--pool-kernel", type=int, dest="pool_kernel")
    p.add_argument("--max-segments", type=int, dest="max_segments")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--task", choices=["openqa", "mcqa", "retrieval"], required=True)
    p.add_argument("--split", choices=["train", "test"], default="test")
    p.add_argument("--credit-rule", choices=["ivqa", "exact"], default="ivqa",
                   dest="credit_rule")
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("fewshot", help="write a seeded subsample of a dataset file")
    p.add_argument("--data", required=True, help="record file (JSONL)")
    p.add_argument("--task", choices=["openqa", "mcqa", "retrieval"], default="openqa")
    p.add_argument("--fraction", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fewshot)

    p = sub.add_parser("overlap", help="answer/token overlap statistic")
    p.add_argument("--tokens", required=True, help="tokenize output file")
    p.add_argument("--data", required=True, help="data directory")
    p.add_argument("--split", choices=["train", "test"], default="test")
    p.set_defaults(func=cmd_overlap)
    return parser


def run(argv: list[str]) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    if args.command == "build-vocab" and not (args.corpus or args.wordlist):
        print("usage error: build-vocab needs --corpus or --wordlist", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
