"""Trainable contrastive text model backends.

Two backends satisfy the same contract: a toy transformer trainable from
scratch for desk-scale runs, and an adapter protocol for externally supplied
pretrained contrastive text models (tokenize / forward / parameter access).
Shipping pretrained weights is out of scope; real runs plug in an adapter.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Protocol, runtime_checkable

import torch
import torch.nn as nn

from .errors import DataError

log = logging.getLogger(__name__)

PAD = "<pad>"
UNK = "<unk>"


class WhitespaceTokenizer:
    """Lowercasing whitespace tokenizer over a fixed word vocabulary."""

    def __init__(self, words: list[str]):
        uniq = sorted(set(w.lower() for w in words if w))
        self.id_to_word = [PAD, UNK] + uniq
        self.word_to_id = {w: i for i, w in enumerate(self.id_to_word)}
        self.pad_id = 0
        self.unk_id = 1

    @classmethod
    def from_corpus(cls, sentences: list[str]) -> "WhitespaceTokenizer":
        words = set()
        for s in sentences:
            words.update(s.lower().split())
        return cls(sorted(words))

    def __len__(self) -> int:
        return len(self.id_to_word)

    def encode(self, text: str) -> list[int]:
        if not text.strip():
            raise DataError("cannot tokenize empty text")
        return [self.word_to_id.get(w, self.unk_id) for w in text.lower().split()]


@runtime_checkable
class TrainableTextModel(Protocol):
    """Adapter contract for any trainable contrastive text model."""

    hidden_dim: int
    max_len: int

    def encode(self, ids: torch.Tensor, mask: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """(B, L) ids + bool mask -> (per-token B x L x H, pooled B x H)."""
        ...

    def tokenize(self, text: str) -> list[int]: ...


class TransformerBlock(nn.Module):
    """Pre-norm self-attention block with a GELU feed-forward."""

    def __init__(self, hidden: int, heads: int, ffn: int, dropout: float = 0.0):
        super().__init__()
        self.ln1 = nn.LayerNorm(hidden)
        self.attn = nn.MultiheadAttention(hidden, heads, dropout=dropout, batch_first=True)
        self.ln2 = nn.LayerNorm(hidden)
        self.mlp = nn.Sequential(nn.Linear(hidden, ffn), nn.GELU(),
                                 nn.Linear(ffn, hidden), nn.Dropout(dropout))

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        # mask: (B, L) bool, True = real token
        h = self.ln1(x)
        a, _ = self.attn(h, h, h, key_padding_mask=~mask, need_weights=False)
        x = x + a
        return x + self.mlp(self.ln2(x))


@dataclass(frozen=True)
class ToyTextConfig:
    hidden_dim: int = 64
    layers: int = 2
    heads: int = 4
    ffn_dim: int = 128
    max_len: int = 128
    pooling: str = "mean"  # "mean" or "first"
    dropout: float = 0.0


def masked_pool(tokens: torch.Tensor, mask: torch.Tensor, mode: str = "mean") -> torch.Tensor:
    """Reduce (B, L, H) token outputs to (B, H) sentence embeddings."""
    if mode == "first":
        return tokens[:, 0]
    if mode != "mean":
        raise DataError(f"unknown pooling mode {mode!r}")
    m = mask.unsqueeze(-1).to(tokens.dtype)
    return (tokens * m).sum(dim=1) / m.sum(dim=1).clamp(min=1)


class ToyTextModel(nn.Module):
    """Small from-scratch transformer emitting per-token and pooled embeddings.

    Exposes the pieces the fusion variants need individually: the embedding
    layer with its post-embedding layer norm (the source of the projector
    initialization), the block stack, and the pooling reduction.
    """

    def __init__(self, tokenizer: WhitespaceTokenizer, config: ToyTextConfig = ToyTextConfig()):
        super().__init__()
        self.tokenizer = tokenizer
        self.config = config
        self.hidden_dim = config.hidden_dim
        self.max_len = config.max_len
        self.tok_emb = nn.Embedding(len(tokenizer), config.hidden_dim)
        self.pos_emb = nn.Embedding(config.max_len, config.hidden_dim)
        self.emb_norm = nn.LayerNorm(config.hidden_dim)
        self.blocks = nn.ModuleList(
            TransformerBlock(config.hidden_dim, config.heads, config.ffn_dim, config.dropout)
            for _ in range(config.layers)
        )

    def tokenize(self, text: str) -> list[int]:
        ids = self.tokenizer.encode(text)
        if len(ids) > self.max_len:
            log.warning("truncating %d-token input to max_len=%d", len(ids), self.max_len)
            ids = ids[: self.max_len]
        return ids

    def embed(self, ids: torch.Tensor, position_offset: int = 0) -> torch.Tensor:
        """Token + position embeddings followed by the embedding layer norm."""
        positions = torch.arange(ids.shape[1], device=ids.device) + position_offset
        return self.emb_norm(self.tok_emb(ids) + self.pos_emb(positions))

    def positional(self, length: int, offset: int, device=None) -> torch.Tensor:
        return self.pos_emb(torch.arange(length, device=device) + offset)

    def run_blocks(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        for block in self.blocks:
            x = block(x, mask)
        return x

    def pool(self, tokens: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        return masked_pool(tokens, mask, self.config.pooling)

    def encode(self, ids: torch.Tensor, mask: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        tokens = self.run_blocks(self.embed(ids), mask)
        return tokens, self.pool(tokens, mask)

    def encode_strings(self, texts: list[str]) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """Batch-encode raw strings; returns (per-token, pooled, mask)."""
        ids, mask = self.batch_ids([self.tokenize(t) for t in texts])
        tokens, pooled = self.encode(ids, mask)
        return tokens, pooled, mask

    def batch_ids(self, seqs: list[list[int]]) -> tuple[torch.Tensor, torch.Tensor]:
        """Pad id sequences into (B, L) ids plus a bool validity mask."""
        if any(len(s) == 0 for s in seqs):
            raise DataError("cannot batch an empty token sequence")
        device = self.tok_emb.weight.device
        length = max(len(s) for s in seqs)
        ids = torch.zeros(len(seqs), length, dtype=torch.long, device=device)
        mask = torch.zeros(len(seqs), length, dtype=torch.bool, device=device)
        for i, s in enumerate(seqs):
            ids[i, : len(s)] = torch.tensor(s, device=device)
            mask[i, : len(s)] = True
        return ids, mask
