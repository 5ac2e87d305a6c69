"""Optimization loop, run configuration and the few-shot subsampling harness.

One loop serves all four fusion variants and both tasks: open-ended QA
trains with in-batch NCE over answers, multi-channel retrieval with the
symmetric loss. Frozen encoders are hashed before and after every run to
prove they were untouched.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import torch

from .datasets import QaRecord, RetrievalRecord
from .encoders import frozen_state_hash
from .errors import DataError, NumericError
from .fusion import FusionBatch, FusionConfig, FusionModel, FusionVariant
from .objectives import nce_loss, symmetric_loss
from .text_model import ToyTextConfig, ToyTextModel, WhitespaceTokenizer
from .token_retrieval import (
    DEFAULT_K,
    DEFAULT_MAX_SEGMENTS,
    DEFAULT_POOL_KERNEL,
    Vocabulary,
    render_token_sequence,
    subsample_features,
    tokenize_video,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    """Full description of a run. Full-scale values are the defaults; the
    desk profile overrides what a from-scratch toy model needs."""

    variant: FusionVariant = FusionVariant.TEXT_TEXT
    task: str = "openqa"  # "openqa" or "retrieval"
    learning_rate: float = 0.00005
    lr_decay_per_epoch: float = 0.9
    batch_size: int = 256
    epochs: int = 20
    grad_clip_norm: float = 1.0
    weight_decay: float = 0.0
    seed: int = 0
    k: int = DEFAULT_K
    pool_kernel: int = DEFAULT_POOL_KERNEL
    max_segments: int = DEFAULT_MAX_SEGMENTS
    temporal_markers: bool = True
    use_asr: bool = False
    fewshot_fraction: float = 1.0
    temperature: float = 1.0
    layernorm_init: bool = True
    hidden_dim: int = 64
    layers: int = 2
    heads: int = 4
    ffn_dim: int = 128
    max_len: int = 128
    pooling: str = "mean"
    dropout: float = 0.0

    def __post_init__(self):
        if min(self.learning_rate, self.lr_decay_per_epoch, self.batch_size,
               self.epochs, self.grad_clip_norm, self.temperature) <= 0:
            raise DataError("learning rate, decay, batch size, epochs, clip norm "
                            "and temperature must all be positive")
        if not 0 < self.fewshot_fraction <= 1:
            raise DataError(f"fewshot_fraction must be in (0, 1], got {self.fewshot_fraction}")
        if self.task not in ("openqa", "retrieval"):
            raise DataError(f"unknown task {self.task!r}")

    @classmethod
    def desk_profile(cls, **overrides) -> "TrainConfig":
        """Desk-scale profile: small batches and a learning rate suited to a
        from-scratch toy text model rather than pretrained-weight finetuning."""
        base = dict(batch_size=32, learning_rate=0.002, epochs=30, dropout=0.1,
                    hidden_dim=128, ffn_dim=256)
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["variant"] = self.variant.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["variant"] = FusionVariant(d["variant"])
        return cls(**d)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n",
                              encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "TrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def hash(self) -> str:
        import hashlib
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    def toy_text_config(self) -> ToyTextConfig:
        return ToyTextConfig(hidden_dim=self.hidden_dim, layers=self.layers, heads=self.heads,
                             ffn_dim=self.ffn_dim, max_len=self.max_len, pooling=self.pooling,
                             dropout=self.dropout)

    def fusion_config(self, video_dim: int) -> FusionConfig:
        return FusionConfig(
            variant=self.variant, video_dim=video_dim, k=self.k,
            pool_kernel=self.pool_kernel, max_segments=self.max_segments,
            temporal_markers=self.temporal_markers, use_asr=self.use_asr,
            layernorm_init=self.layernorm_init, pooling=self.pooling,
        )


@dataclass
class RunRecord:
    """Append-only record of one training run."""

    config_hash: str
    seed: int
    per_epoch_loss: list[float] = field(default_factory=list)
    metrics: dict[str, float] = field(default_factory=dict)
    wall_clock_sec: float = 0.0
    frozen_hash_before: str = ""
    frozen_hash_after: str = ""

    def append_to(self, path: str | Path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with Path(path).open("a", encoding="utf-8") as f:
            f.write(json.dumps(asdict(self), sort_keys=True) + "\n")


def fewshot_subsample(records: list, fraction: float, seed: int) -> list:
    """Seeded uniform sample without replacement of ceil(fraction * N)
    records, preserving original order. The same (seed, fraction) selects the
    same subset for every variant; subsets for different fractions are drawn
    independently (not nested)."""
    if not 0 < fraction <= 1:
        raise DataError(f"fraction must be in (0, 1], got {fraction}")
    if not records:
        raise DataError("cannot subsample an empty dataset")
    if fraction == 1.0:
        return list(records)
    count = math.ceil(fraction * len(records))
    rng = np.random.default_rng(seed)
    idx = sorted(rng.choice(len(records), size=count, replace=False))
    return [records[i] for i in idx]


def build_model(cfg: TrainConfig, corpus_sentences: list[str], video_dim: int) -> FusionModel:
    """Construct a fusion model with a toy text model whose tokenizer covers
    the given corpus. Seeded, so construction is reproducible."""
    torch.manual_seed(cfg.seed)
    markers = ["first", "then"] if cfg.temporal_markers else []
    tokenizer = WhitespaceTokenizer.from_corpus(list(corpus_sentences) + markers)
    text_model = ToyTextModel(tokenizer, cfg.toy_text_config())
    return FusionModel(text_model, cfg.fusion_config(video_dim))


def _fields(record, task: str) -> tuple[str, str, str, str]:
    """(video_id, question_text, target_text, asr) for either record type."""
    if task == "openqa":
        assert isinstance(record, QaRecord)
        return record.video_id, record.question, record.answers[0], record.asr or ""
    assert isinstance(record, RetrievalRecord)
    question = record.speech.strip() or "no speech"
    return record.video_id, question, record.caption, ""


def compute_video_words(
    records, video_encoder, vocab: Vocabulary | None, cfg: TrainConfig
) -> dict[str, str]:
    """Rendered token string per unique video; empty for continuous variants."""
    if not cfg.variant.uses_tokens:
        return {}
    if vocab is None:
        raise DataError(f"variant {cfg.variant.value} needs a vocabulary")
    words: dict[str, str] = {}
    for rec in records:
        vid = rec.video_id
        if vid in words:
            continue
        tokenized = tokenize_video(video_encoder.encode_video(vid), vocab,
                                   k=cfg.k, kernel=cfg.pool_kernel,
                                   max_segments=cfg.max_segments)
        words[vid] = render_token_sequence(tokenized.windows, cfg.temporal_markers)
    return words


def make_batch(records, video_encoder, video_words: dict[str, str],
               cfg: TrainConfig) -> tuple[FusionBatch, list[str]]:
    """Pad per-record features and assemble model inputs; also returns the
    per-record target texts (answers or captions)."""
    questions, targets, asrs, feats = [], [], [], []
    for rec in records:
        vid, question, target, asr = _fields(rec, cfg.task)
        questions.append(question)
        targets.append(target)
        asrs.append(asr)
        feats.append(subsample_features(video_encoder.encode_video(vid), cfg.max_segments))
    t_max = max(f.num_segments for f in feats)
    dim = feats[0].dim
    features = torch.zeros(len(records), t_max, dim)
    mask = torch.zeros(len(records), t_max, dtype=torch.bool)
    for i, f in enumerate(feats):
        features[i, : f.num_segments] = torch.from_numpy(np.array(f.data)).float()
        mask[i, : f.num_segments] = True
    batch = FusionBatch(
        questions=questions, features=features, feature_mask=mask,
        video_words=[video_words.get(r.video_id, "") for r in records], asr=asrs,
    )
    return batch, targets


def fused_embeddings(model: FusionModel, records, video_encoder,
                     video_words: dict[str, str], cfg: TrainConfig,
                     batch_size: int = 64) -> torch.Tensor:
    """Inference-mode fused embeddings for a record list (N x H)."""
    model.eval()
    chunks = []
    with torch.no_grad():
        for start in range(0, len(records), batch_size):
            batch, _ = make_batch(records[start : start + batch_size],
                                  video_encoder, video_words, cfg)
            chunks.append(model(batch))
    return torch.cat(chunks)


def train(model: FusionModel, records: list, cfg: TrainConfig, video_encoder,
          vocab: Vocabulary | None = None) -> RunRecord:
    """Seeded training loop with per-epoch learning-rate decay and global
    gradient-norm clipping. Few-shot runs keep the full-data iteration count
    by cycling through the reshuffled subset."""
    if not records:
        raise DataError("cannot train on an empty dataset")
    full_count = len(records)
    if cfg.fewshot_fraction < 1.0:
        records = fewshot_subsample(records, cfg.fewshot_fraction, cfg.seed)

    probe_words = list(vocab.words[:32]) if vocab is not None else ["probe"]
    probe_vids = sorted({r.video_id for r in records})[:32]
    hash_before = frozen_state_hash(video_encoder, probe_vids, probe_words)

    video_words = compute_video_words(records, video_encoder, vocab, cfg)
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate,
                                 weight_decay=cfg.weight_decay)
    steps_per_epoch = math.ceil(full_count / cfg.batch_size)

    def epoch_batches():
        if cfg.fewshot_fraction == 1.0:
            perm = rng.permutation(len(records))
            return [perm[s : s + cfg.batch_size] for s in range(0, len(records), cfg.batch_size)]
        # iteration-matched few-shot: cycle reshuffled subset permutations
        # until the full-data step count is covered
        order: list[int] = []
        while len(order) < steps_per_epoch * cfg.batch_size:
            order.extend(rng.permutation(len(records)).tolist())
        return [np.asarray(order[s * cfg.batch_size : (s + 1) * cfg.batch_size])
                for s in range(steps_per_epoch)]

    start_time = time.monotonic()
    record = RunRecord(config_hash=cfg.hash(), seed=cfg.seed,
                       frozen_hash_before=hash_before)
    for epoch in range(cfg.epochs):
        lr = cfg.learning_rate * cfg.lr_decay_per_epoch ** epoch
        for group in optimizer.param_groups:
            group["lr"] = lr
        model.train()
        losses = []
        for step, idx in enumerate(epoch_batches()):
            batch, targets = make_batch([records[i] for i in idx],
                                        video_encoder, video_words, cfg)
            fused = model(batch)
            answer_emb = model.encode_answers(targets)
            scores = fused @ answer_emb.T
            if cfg.task == "openqa":
                loss = nce_loss(scores, torch.arange(len(idx)), cfg.temperature)
            else:
                loss = symmetric_loss(scores, cfg.temperature)
            if not torch.isfinite(loss):
                raise NumericError(
                    f"non-finite loss at epoch {epoch} step {step}; "
                    f"score range [{scores.min().item():.3g}, {scores.max().item():.3g}], "
                    f"loss history {losses[-3:]}"
                )
            optimizer.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip_norm)
            optimizer.step()
            losses.append(float(loss.detach()))
        record.per_epoch_loss.append(float(np.mean(losses)))
        log.info("epoch %d: lr %.2e mean loss %.4f", epoch, lr, record.per_epoch_loss[-1])

    record.wall_clock_sec = time.monotonic() - start_time
    record.frozen_hash_after = frozen_state_hash(video_encoder, probe_vids, probe_words)
    if record.frozen_hash_after != hash_before:
        raise NumericError("frozen encoder outputs changed during training")
    return record


# -- model-backed evaluation wrappers --------------------------------------


def evaluate_open_ended(model: FusionModel, records: list[QaRecord], video_encoder,
                        vocab: Vocabulary | None, cfg: TrainConfig, corpus,
                        credit_rule: str = "ivqa") -> float:
    from .evaluation import eval_open_ended

    video_words = compute_video_words(records, video_encoder, vocab, cfg)
    fused = fused_embeddings(model, records, video_encoder, video_words, cfg)
    model.eval()
    with torch.no_grad():
        corpus_emb = model.encode_answers(list(corpus.answers))
    scores = (fused @ corpus_emb.T).numpy()
    by_index = {id(rec): i for i, rec in enumerate(records)}
    return eval_open_ended(lambda rec: scores[by_index[id(rec)]], records,
                           corpus, credit_rule)


def evaluate_multiple_choice(model: FusionModel, records: list[QaRecord], video_encoder,
                             vocab: Vocabulary | None, cfg: TrainConfig) -> float:
    from .evaluation import eval_multiple_choice

    video_words = compute_video_words(records, video_encoder, vocab, cfg)
    fused = fused_embeddings(model, records, video_encoder, video_words, cfg)
    by_index = {id(rec): i for i, rec in enumerate(records)}
    model.eval()

    def score_fn(rec, candidates):
        with torch.no_grad():
            cand_emb = model.encode_answers(list(candidates))
        return (cand_emb @ fused[by_index[id(rec)]]).numpy()

    return eval_multiple_choice(score_fn, records)


def evaluate_retrieval(model: FusionModel, records: list[RetrievalRecord], video_encoder,
                       vocab: Vocabulary | None, cfg: TrainConfig) -> dict[str, float]:
    """Queries are caption embeddings from the answer encoder; the corpus is
    the fused (video, speech) embeddings of the same records."""
    from .evaluation import eval_retrieval

    video_words = compute_video_words(records, video_encoder, vocab, cfg)
    fused = fused_embeddings(model, records, video_encoder, video_words, cfg)
    model.eval()
    with torch.no_grad():
        queries = model.encode_answers([r.caption for r in records])
    scores = (queries @ fused.T).numpy()
    return eval_retrieval(scores, list(range(len(records))))
