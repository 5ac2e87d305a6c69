"""Frozen multimodal encoder backends and the precomputed feature store.

The frozen pair (video encoder, word encoder) is never trained; the synthetic
pair stands in for real pretrained contrastive backbones at desk scale. Word
vectors are deterministic seeded unit vectors; a synthetic video feature is
the renormalized mean of its planted word vectors plus isotropic noise.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, runtime_checkable

import numpy as np

from .embeddings import Embedding
from .errors import DataError, MissingFeatureError, NumericError

DEFAULT_SEGMENT_SECONDS = 1.5


@dataclass(frozen=True)
class VideoFeatures:
    """Temporal sequence of segment embeddings, one vector per segment."""

    video_id: str
    data: np.ndarray  # T x D
    segment_seconds: float = DEFAULT_SEGMENT_SECONDS

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] == 0:
            raise DataError(f"video features must be T x D with T >= 1, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise NumericError(f"non-finite feature values for video {self.video_id!r}")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def num_segments(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]


@runtime_checkable
class FrozenVideoEncoder(Protocol):
    dim: int
    segment_seconds: float

    def encode_video(self, video_id: str) -> VideoFeatures: ...


@runtime_checkable
class FrozenTextEncoder(Protocol):
    dim: int

    def encode_word(self, word: str) -> Embedding: ...


def _word_rng(seed: int, word: str) -> np.random.Generator:
    digest = hashlib.sha256(f"{seed}:{word}".encode("utf-8")).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


@dataclass
class SyntheticEncoderPair:
    """Deterministic stand-in for a pretrained contrastive video/text pair.

    Word vectors are unit norm and fixed by (seed, word). Videos must be
    planted first: each segment is the renormalized mean of its planted
    word vectors plus N(0, noise_sigma^2) noise, so top-k word retrieval
    provably recovers the planted words at noise_sigma = 0.
    """

    dim: int = 64
    seed: int = 0
    noise_sigma: float = 0.0
    segment_seconds: float = DEFAULT_SEGMENT_SECONDS
    _plants: dict[str, tuple[tuple[str, ...], ...]] = field(default_factory=dict, repr=False)

    def encode_word(self, word: str) -> Embedding:
        if not word:
            raise DataError("cannot encode an empty word")
        vec = _word_rng(self.seed, word).standard_normal(self.dim)
        return Embedding(vec / np.linalg.norm(vec))

    def plant(self, video_id: str, segments: list[list[str]]) -> None:
        """Register a video as a list of per-segment planted word lists."""
        if not segments or any(not seg for seg in segments):
            raise DataError(f"video {video_id!r} needs >= 1 segment, each with >= 1 word")
        self._plants[video_id] = tuple(tuple(seg) for seg in segments)

    def planted_words(self, video_id: str) -> tuple[tuple[str, ...], ...]:
        if video_id not in self._plants:
            raise MissingFeatureError(f"video {video_id!r} was never planted")
        return self._plants[video_id]

    def encode_video(self, video_id: str) -> VideoFeatures:
        segments = self.planted_words(video_id)
        noise_rng = _word_rng(self.seed, f"video-noise:{video_id}")
        rows = []
        for seg in segments:
            mean = np.mean([self.encode_word(w).values for w in seg], axis=0)
            row = mean / np.linalg.norm(mean)
            if self.noise_sigma > 0:
                row = row + noise_rng.normal(0.0, self.noise_sigma, self.dim)
            rows.append(row)
        return VideoFeatures(video_id, np.stack(rows), self.segment_seconds)


class PrecomputedFeatureStore:
    """Read-only store of per-video feature files under one directory.

    Layout: ``manifest.json`` maps video id -> relative ``.npy`` file (the
    npy header carries T and D; values are row-major). Missing ids raise,
    never return silent zeros.
    """

    MANIFEST = "manifest.json"

    def __init__(self, root: str | Path, segment_seconds: float = DEFAULT_SEGMENT_SECONDS):
        self.root = Path(root)
        manifest_path = self.root / self.MANIFEST
        if not manifest_path.exists():
            raise DataError(f"feature store manifest not found: {manifest_path}")
        self._index: dict[str, str] = json.loads(manifest_path.read_text(encoding="utf-8"))
        self.segment_seconds = segment_seconds
        first = next(iter(self._index), None)
        self.dim = self.encode_video(first).dim if first is not None else 0

    def video_ids(self) -> list[str]:
        return sorted(self._index)

    def encode_video(self, video_id: str) -> VideoFeatures:
        if video_id not in self._index:
            raise MissingFeatureError(f"video {video_id!r} not in feature store {self.root}")
        data = np.load(self.root / self._index[video_id])
        return VideoFeatures(video_id, data, self.segment_seconds)

    @classmethod
    def write(cls, root: str | Path, features: dict[str, np.ndarray]) -> "PrecomputedFeatureStore":
        """Materialize a store from video id -> T x D arrays."""
        root = Path(root)
        root.mkdir(parents=True, exist_ok=True)
        index = {}
        for vid in sorted(features):
            fname = f"{hashlib.sha1(vid.encode()).hexdigest()[:16]}.npy"
            np.save(root / fname, np.asarray(features[vid], dtype=np.float64))
            index[vid] = fname
        (root / cls.MANIFEST).write_text(
            json.dumps(index, indent=0, sort_keys=True), encoding="utf-8"
        )
        return cls(root)


def frozen_state_hash(encoder, video_ids: list[str], probe_words: list[str]) -> str:
    """Digest of encoder outputs over a probe set; equal before/after a
    training run iff the frozen encoders were untouched."""
    h = hashlib.sha256()
    for vid in video_ids:
        h.update(encoder.encode_video(vid).data.tobytes())
    if hasattr(encoder, "encode_word"):  # video-only stores skip the word probe
        for word in probe_words:
            h.update(encoder.encode_word(word).values.tobytes())
    return h.hexdigest()
