"""Discrete text-token video representation.

Builds the answer-word vocabulary, retrieves the top-k most similar
vocabulary words per video segment by inner product with the frozen video
feature, windows the per-segment words through score max-pooling to cut
repetition across neighbouring segments, and renders the surviving words
(optionally with "first"/"then" temporal markers) into the string fed to
the text model.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .embeddings import Embedding, EmbeddingMatrix, dot_scores
from .encoders import FrozenTextEncoder, VideoFeatures
from .errors import DataError, DimensionMismatchError

DEFAULT_K = 15
IVQA_K = 25  # larger k suits iVQA-style data with five answer annotations
DEFAULT_POOL_KERNEL = 5
DEFAULT_MAX_SEGMENTS = 20


def _load_wordlist(name: str) -> frozenset[str]:
    text = resources.files("mcvlr.data").joinpath(name).read_text(encoding="utf-8")
    return frozenset(w.strip() for w in text.splitlines() if w.strip())


def load_stopwords() -> frozenset[str]:
    return _load_wordlist("stopwords.txt")


class WordlistTagger:
    """Noun/verb tagger backed by the bundled wordlists.

    Deterministic and dependency-free; covers plural nouns and 3rd-person
    verbs by stripping a trailing "s"/"es". Real deployments may supply any
    callable word -> {"noun", "verb", "other"} instead.
    """

    def __init__(self):
        self.nouns = _load_wordlist("nouns.txt")
        self.verbs = _load_wordlist("verbs.txt")

    def __call__(self, word: str) -> str:
        w = word.lower()
        stems = [w]
        if w.endswith("es"):
            stems.append(w[:-2])
        if w.endswith("s"):
            stems.append(w[:-1])
        if any(s in self.nouns for s in stems):
            return "noun"
        if any(s in self.verbs for s in stems):
            return "verb"
        return "other"


@dataclass(frozen=True)
class Vocabulary:
    """Word list with an aligned embedding matrix for token retrieval."""

    words: tuple[str, ...]
    embeddings: EmbeddingMatrix
    source: str = "answer-word"  # or "external-list"

    def __post_init__(self):
        if not self.words:
            raise DataError("vocabulary must be nonempty")
        if len(set(self.words)) != len(self.words):
            raise DataError("vocabulary words must be unique")
        if self.embeddings.rows != len(self.words):
            raise DataError(
                f"{self.embeddings.rows} embedding rows for {len(self.words)} words"
            )

    def __len__(self) -> int:
        return len(self.words)

    def save(self, out_dir: str | Path) -> None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "words.txt").write_text("\n".join(self.words) + "\n", encoding="utf-8")
        (out_dir / "source.txt").write_text(self.source + "\n", encoding="utf-8")
        self.embeddings.save(out_dir / "embeddings")

    @classmethod
    def load(cls, out_dir: str | Path) -> "Vocabulary":
        out_dir = Path(out_dir)
        words = tuple((out_dir / "words.txt").read_text(encoding="utf-8").split())
        source_path = out_dir / "source.txt"
        source = source_path.read_text(encoding="utf-8").strip() if source_path.exists() else "answer-word"
        return cls(words, EmbeddingMatrix.load(out_dir / "embeddings"), source)


@dataclass(frozen=True)
class SegmentTokens:
    """Top-k (word, score) pairs retrieved for one video segment."""

    segment_index: int
    entries: tuple[tuple[str, float], ...]  # score-descending, words unique


@dataclass(frozen=True)
class TokenizedVideo:
    video_id: str
    per_segment: tuple[SegmentTokens, ...]
    windows: tuple[tuple[str, ...], ...]  # pooled words per temporal window

    @property
    def pooled(self) -> tuple[str, ...]:
        return tuple(w for window in self.windows for w in window)


def build_vocabulary(
    corpus: Iterable[str],
    tagger: Callable[[str], str],
    text_encoder: FrozenTextEncoder,
    source: str = "answer-word",
) -> Vocabulary:
    """Answer-word vocabulary: the sorted unique nouns and verbs of a corpus,
    embedded with the frozen word encoder."""
    words = set()
    n_sentences = 0
    for sentence in corpus:
        n_sentences += 1
        for token in sentence.lower().split():
            if tagger(token) in ("noun", "verb"):
                words.add(token)
    if n_sentences == 0:
        raise DataError("empty corpus")
    if not words:
        raise DataError("corpus yields no nouns or verbs")
    ordered = tuple(sorted(words))
    matrix = EmbeddingMatrix(
        np.stack([text_encoder.encode_word(w).values for w in ordered]),
        row_keys=ordered,
    )
    return Vocabulary(ordered, matrix, source)


def vocabulary_from_wordlist(
    path: str | Path, text_encoder: FrozenTextEncoder
) -> Vocabulary:
    """External-list mode: embed a plain newline-delimited word file."""
    words = [w.strip().lower() for w in Path(path).read_text(encoding="utf-8").splitlines()]
    ordered = tuple(dict.fromkeys(w for w in words if w))
    if not ordered:
        raise DataError(f"empty word list {path}")
    matrix = EmbeddingMatrix(
        np.stack([text_encoder.encode_word(w).values for w in ordered]),
        row_keys=ordered,
    )
    return Vocabulary(ordered, matrix, source="external-list")


def retrieve_tokens(features: VideoFeatures, vocab: Vocabulary, k: int) -> list[SegmentTokens]:
    """Exact top-k vocabulary words per segment by inner product.

    Ties break toward the lower vocabulary index; no approximation.
    """
    if not 1 <= k <= len(vocab):
        raise DataError(f"k={k} out of range for vocabulary of {len(vocab)}")
    if features.dim != vocab.embeddings.dim:
        raise DimensionMismatchError(
            f"feature dim {features.dim} != vocabulary dim {vocab.embeddings.dim}"
        )
    result = []
    for t in range(features.num_segments):
        scores = dot_scores(Embedding(features.data[t]), vocab.embeddings)
        # stable sort of -scores: equal scores keep ascending index order
        top = np.argsort(-scores, kind="stable")[:k]
        result.append(
            SegmentTokens(t, tuple((vocab.words[i], float(scores[i])) for i in top))
        )
    return result


def pool_tokens(
    per_segment: list[SegmentTokens],
    vocab: Vocabulary,
    k: int,
    kernel: int = DEFAULT_POOL_KERNEL,
) -> tuple[tuple[str, ...], ...]:
    """Window the segments (non-overlapping, stride == kernel) and keep each
    window's top-k words by max score, deduplicated across the window."""
    if kernel < 1:
        raise DataError(f"kernel must be >= 1, got {kernel}")
    index = {w: i for i, w in enumerate(vocab.words)}
    windows = []
    for start in range(0, len(per_segment), kernel):
        best: dict[str, float] = {}
        for seg in per_segment[start : start + kernel]:
            for word, score in seg.entries:
                if word not in best or score > best[word]:
                    best[word] = score
        ranked = sorted(best.items(), key=lambda ws: (-ws[1], index[ws[0]]))[:k]
        windows.append(tuple(w for w, _ in ranked))
    return tuple(windows)


def subsample_features(features: VideoFeatures, max_segments: int) -> VideoFeatures:
    """Uniform-stride subsampling to at most max_segments rows, keeping row 0."""
    if max_segments < 1:
        raise DataError(f"max_segments must be >= 1, got {max_segments}")
    t = features.num_segments
    if t <= max_segments:
        return features
    # exactly max_segments rows, uniformly spaced from row 0 (T=10, max=5 -> 0,2,4,6,8)
    idx = (np.arange(max_segments) * t) // max_segments
    return VideoFeatures(features.video_id, features.data[idx], features.segment_seconds)


def render_token_sequence(windows: tuple[tuple[str, ...], ...], temporal_markers: bool) -> str:
    """Join pooled window words; markers prefix window 1 with "first" and
    every later window with "then"."""
    nonempty = [w for w in windows if w]
    if not nonempty:
        raise DataError("no pooled tokens to render")
    if not temporal_markers:
        return " ".join(w for window in nonempty for w in window)
    parts = []
    for i, window in enumerate(nonempty):
        parts.append("first" if i == 0 else "then")
        parts.extend(window)
    return " ".join(parts)


def tokenize_video(
    features: VideoFeatures,
    vocab: Vocabulary,
    k: int = DEFAULT_K,
    kernel: int = DEFAULT_POOL_KERNEL,
    max_segments: int = DEFAULT_MAX_SEGMENTS,
) -> TokenizedVideo:
    """Full pipeline: subsample long videos, retrieve per-segment top-k,
    max-pool over windows."""
    feats = subsample_features(features, max_segments)
    per_segment = retrieve_tokens(feats, vocab, k)
    windows = pool_tokens(per_segment, vocab, k, kernel)
    return TokenizedVideo(features.video_id, tuple(per_segment), windows)
