"""The four fusion variants over one shared harness.

Video is represented either as frozen continuous features or as retrieved
text tokens; fusion happens either in a shallow randomly initialized
multimodal transformer or inside the trainable text model itself. Every
variant emits a fused embedding of the text model's hidden width, so one
training and evaluation harness serves all four. Answers always go through
a separate answer encoder initialized from (but not sharing parameters
with) the text model.
"""

from __future__ import annotations

import copy
import enum
import hashlib
import json
import logging
from dataclasses import dataclass, asdict

import torch
import torch.nn as nn

from .errors import DataError
from .text_model import ToyTextConfig, ToyTextModel, TransformerBlock, WhitespaceTokenizer, masked_pool
from . import token_retrieval as tr

log = logging.getLogger(__name__)


class FusionVariant(str, enum.Enum):
    CONTI_MULTI = "conti_multi"  # continuous features + multimodal transformer
    CONTI_TEXT = "conti_text"    # continuous features + text transformer
    TEXT_MULTI = "text_multi"    # text tokens + multimodal transformer
    TEXT_TEXT = "text_text"      # text tokens + text transformer

    @property
    def uses_tokens(self) -> bool:
        return self in (FusionVariant.TEXT_MULTI, FusionVariant.TEXT_TEXT)


@dataclass(frozen=True)
class FusionConfig:
    variant: FusionVariant
    video_dim: int
    k: int = tr.DEFAULT_K
    pool_kernel: int = tr.DEFAULT_POOL_KERNEL
    max_segments: int = tr.DEFAULT_MAX_SEGMENTS
    temporal_markers: bool = True
    use_asr: bool = False
    mm_blocks: int = 2
    mm_max_len: int = 256
    layernorm_init: bool = True  # copy the text model's embedding LayerNorm into the projector
    pooling: str = "mean"

    def hash(self) -> str:
        payload = {k: (v.value if isinstance(v, enum.Enum) else v) for k, v in asdict(self).items()}
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


class MultimodalTransformer(nn.Module):
    """Shallow randomly initialized transformer fusing concatenated streams.

    Adds learned positional embeddings over the concatenated sequence plus a
    2-way segment embedding distinguishing the text and video streams.
    """

    def __init__(self, width: int, blocks: int = 2, heads: int = 4, max_len: int = 256):
        super().__init__()
        self.width = width
        self.pos_emb = nn.Embedding(max_len, width)
        self.seg_emb = nn.Embedding(2, width)
        self.blocks = nn.ModuleList(
            TransformerBlock(width, heads, 2 * width) for _ in range(blocks)
        )

    def forward(self, x: torch.Tensor, mask: torch.Tensor, segments: torch.Tensor) -> torch.Tensor:
        positions = torch.arange(x.shape[1], device=x.device)
        x = x + self.pos_emb(positions) + self.seg_emb(segments)
        for block in self.blocks:
            x = block(x, mask)
        return x


class Projector(nn.Module):
    """Maps continuous video features into the text model's input space.

    Same shape as the multimodal transformer, but ends in a LayerNorm whose
    parameters are copied from the text model's post-embedding LayerNorm at
    construction (ablatable via ``layernorm_init=False``), aligning projected
    feature statistics with text embedding statistics.
    """

    def __init__(self, in_dim: int, width: int, blocks: int = 2, heads: int = 4, max_len: int = 256):
        super().__init__()
        self.adapter = nn.Linear(in_dim, width) if in_dim != width else None
        self.pos_emb = nn.Embedding(max_len, width)
        self.blocks = nn.ModuleList(
            TransformerBlock(width, heads, 2 * width) for _ in range(blocks)
        )
        self.final_norm = nn.LayerNorm(width)

    def init_final_norm_from(self, norm: nn.LayerNorm) -> None:
        with torch.no_grad():
            self.final_norm.weight.copy_(norm.weight)
            self.final_norm.bias.copy_(norm.bias)

    def forward(self, feats: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        x = self.adapter(feats) if self.adapter is not None else feats
        x = x + self.pos_emb(torch.arange(x.shape[1], device=x.device))
        for block in self.blocks:
            x = block(x, mask)
        return self.final_norm(x)


@dataclass
class FusionBatch:
    """Prepared model inputs for a batch of samples.

    ``video_words`` holds the rendered token string per sample ("" when the
    variant ignores tokens or pooling produced nothing); features are always
    present as a padded tensor with validity mask.
    """

    questions: list[str]
    features: torch.Tensor        # B x T x D
    feature_mask: torch.Tensor    # B x T bool
    video_words: list[str]
    asr: list[str]

    def __post_init__(self):
        b = len(self.questions)
        if not (self.features.shape[0] == self.feature_mask.shape[0] == b
                and len(self.video_words) == len(self.asr) == b):
            raise DataError("inconsistent batch field lengths")


def assemble_text_input(question: str, asr: str, video_words: str, use_asr: bool) -> str:
    """Single-sequence assembly rule: question, then ASR (when enabled and
    present), then video token words. Tail truncation therefore drops video
    tokens before ever touching the question."""
    parts = [question]
    if use_asr and asr:
        parts.append(asr)
    if video_words:
        parts.append(video_words)
    return " ".join(parts)


class FusionModel(nn.Module):
    """One of the four variants plus the shared answer encoder."""

    def __init__(self, text_model: ToyTextModel, config: FusionConfig):
        super().__init__()
        self.config = config
        self.variant = config.variant
        self.G = text_model
        self.G_A = copy.deepcopy(text_model)  # initialized from G, parameters not shared
        width = text_model.hidden_dim
        self.H = None
        self.P = None
        self.video_adapter = None
        if self.variant in (FusionVariant.CONTI_MULTI, FusionVariant.TEXT_MULTI):
            self.H = MultimodalTransformer(width, config.mm_blocks, max_len=config.mm_max_len)
        if self.variant == FusionVariant.CONTI_MULTI and config.video_dim != width:
            self.video_adapter = nn.Linear(config.video_dim, width)
        if self.variant == FusionVariant.CONTI_TEXT:
            self.P = Projector(config.video_dim, width, config.mm_blocks, max_len=config.mm_max_len)
            if config.layernorm_init:
                self.P.init_final_norm_from(self.G.emb_norm)
        report = self.parameter_report()
        log.info("fusion model %s trainable parameters: %s", self.variant.value, report)

    @property
    def embedding_dim(self) -> int:
        return self.G.hidden_dim

    def parameter_report(self) -> dict[str, int]:
        """Trainable parameter count per component group."""
        groups = {"G": self.G, "G_A": self.G_A, "H": self.H, "P": self.P,
                  "video_adapter": self.video_adapter}
        return {
            name: sum(p.numel() for p in module.parameters())
            for name, module in groups.items() if module is not None
        }

    def forward(self, batch: FusionBatch) -> torch.Tensor:
        """Fused embedding e for every sample in the batch (B x H)."""
        if not bool(batch.feature_mask.any(dim=1).all()):
            raise DataError("a batch sample has zero video segments")
        if self.variant == FusionVariant.CONTI_MULTI:
            return self._fuse_conti_multi(batch)
        if self.variant == FusionVariant.CONTI_TEXT:
            return self._fuse_conti_text(batch)
        if self.variant == FusionVariant.TEXT_MULTI:
            return self._fuse_text_multi(batch)
        return self._fuse_text_text(batch)

    def _question_inputs(self, batch: FusionBatch) -> list[str]:
        if self.config.use_asr:
            return [assemble_text_input(q, a, "", True)
                    for q, a in zip(batch.questions, batch.asr)]
        return list(batch.questions)

    def _fuse_conti_multi(self, batch: FusionBatch) -> torch.Tensor:
        q_tokens, _, q_mask = self.G.encode_strings(self._question_inputs(batch))
        feats = batch.features.to(q_tokens.dtype)
        if self.video_adapter is not None:
            feats = self.video_adapter(feats)
        elif feats.shape[-1] != self.G.hidden_dim:
            raise DataError(
                f"video width {feats.shape[-1]} != text width {self.G.hidden_dim} "
                "and no adapter configured"
            )
        x = torch.cat([q_tokens, feats], dim=1)
        mask = torch.cat([q_mask, batch.feature_mask], dim=1)
        segments = torch.cat([
            torch.zeros_like(q_mask, dtype=torch.long),
            torch.ones_like(batch.feature_mask, dtype=torch.long),
        ], dim=1)
        return masked_pool(self.H(x, mask, segments), mask, self.config.pooling)

    def _fuse_conti_text(self, batch: FusionBatch) -> torch.Tensor:
        ids, q_mask = self.G.batch_ids([self.G.tokenize(t) for t in self._question_inputs(batch)])
        text_emb = self.G.embed(ids)
        projected = self.P(batch.features.to(text_emb.dtype), batch.feature_mask)
        # projected video tokens take fresh positions continuing after the text block
        offset = ids.shape[1]
        projected = projected + self.G.positional(projected.shape[1], offset, projected.device)
        x = torch.cat([text_emb, projected], dim=1)
        mask = torch.cat([q_mask, batch.feature_mask], dim=1)
        tokens = self.G.run_blocks(x, mask)
        return self.G.pool(tokens, mask)

    def _encode_word_branch(self, video_words: list[str]) -> tuple[torch.Tensor, torch.Tensor]:
        """Encode per-video token strings with G (weights shared with the
        question branch); empty strings yield a fully masked row."""
        empties = [i for i, w in enumerate(video_words) if not w.strip()]
        if empties:
            log.info("%d/%d samples have no retrieved tokens; video branch masked out",
                     len(empties), len(video_words))
        seqs = [self.G.tokenize(w) if w.strip() else [self.G.tokenizer.pad_id]
                for w in video_words]
        ids, mask = self.G.batch_ids(seqs)
        tokens, _ = self.G.encode(ids, mask)
        for i in empties:
            mask[i] = False
        return tokens, mask

    def _fuse_text_multi(self, batch: FusionBatch) -> torch.Tensor:
        q_tokens, _, q_mask = self.G.encode_strings(self._question_inputs(batch))
        w_tokens, w_mask = self._encode_word_branch(batch.video_words)
        x = torch.cat([q_tokens, w_tokens], dim=1)
        mask = torch.cat([q_mask, w_mask], dim=1)
        segments = torch.cat([
            torch.zeros_like(q_mask, dtype=torch.long),
            torch.ones_like(w_mask, dtype=torch.long),
        ], dim=1)
        return masked_pool(self.H(x, mask, segments), mask, self.config.pooling)

    def _fuse_text_text(self, batch: FusionBatch) -> torch.Tensor:
        texts = [
            assemble_text_input(q, a, w, self.config.use_asr)
            for q, a, w in zip(batch.questions, batch.asr, batch.video_words)
        ]
        _, pooled, _ = self.G.encode_strings(texts)
        return pooled

    def encode_answers(self, answers: list[str]) -> torch.Tensor:
        """Answer embeddings from the separate answer encoder (B x H)."""
        if any(not a.strip() for a in answers):
            raise DataError("cannot encode an empty answer")
        _, pooled, _ = self.G_A.encode_strings(answers)
        return pooled

    # -- checkpointing ------------------------------------------------------

    def save_checkpoint(self, out_dir) -> None:
        from pathlib import Path
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        cfg = {k: (v.value if isinstance(v, enum.Enum) else v)
               for k, v in asdict(self.config).items()}
        manifest = {
            "variant": self.variant.value,
            "embedding_dim": self.embedding_dim,
            "video_dim": self.config.video_dim,
            "config": cfg,
            "config_hash": self.config.hash(),
            "text_config": asdict(self.G.config),
            "tokenizer_words": self.G.tokenizer.id_to_word[2:],
        }
        (out_dir / "manifest.json").write_text(
            json.dumps(manifest, sort_keys=True, indent=1), encoding="utf-8"
        )
        torch.save(self.state_dict(), out_dir / "weights.pt")

    @classmethod
    def load_checkpoint(cls, out_dir) -> "FusionModel":
        from pathlib import Path
        out_dir = Path(out_dir)
        manifest = json.loads((out_dir / "manifest.json").read_text(encoding="utf-8"))
        tokenizer = WhitespaceTokenizer(manifest["tokenizer_words"])
        text_model = ToyTextModel(tokenizer, ToyTextConfig(**manifest["text_config"]))
        cfg = dict(manifest["config"])
        cfg["variant"] = FusionVariant(cfg["variant"])
        model = cls(text_model, FusionConfig(**cfg))
        model.load_state_dict(torch.load(out_dir / "weights.pt", weights_only=True))
        model.eval()
        return model
