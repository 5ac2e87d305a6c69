"""Dataset record schemas, line-delimited ingestion, and the synthetic
planted-signal generator.

Records live one-per-line as UTF-8 JSON for diff-ability and streaming.
The synthetic generator plants known vocabulary words into video segments
through the synthetic encoder pair, so every downstream mechanism (token
retrieval, training, evaluation) can be verified against known ground truth
at desk scale.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .encoders import SyntheticEncoderPair
from .errors import DataError
from .token_retrieval import WordlistTagger, load_stopwords


@dataclass(frozen=True)
class QaRecord:
    """Open-ended or multiple-choice QA sample."""

    video_id: str
    question: str
    answers: tuple[str, ...]          # 5 for iVQA-style data, 1 otherwise
    negatives: tuple[str, ...] | None = None  # exactly 3 for multiple-choice
    asr: str | None = None

    def __post_init__(self):
        if not self.question.strip():
            raise DataError(f"record {self.video_id!r}: empty question")
        if not self.answers or any(not a.strip() for a in self.answers):
            raise DataError(f"record {self.video_id!r}: needs >= 1 nonempty answer")
        object.__setattr__(self, "answers", tuple(self.answers))
        if self.negatives is not None:
            if len(self.negatives) != 3:
                raise DataError(f"record {self.video_id!r}: multiple-choice needs 3 negatives")
            object.__setattr__(self, "negatives", tuple(self.negatives))


@dataclass(frozen=True)
class RetrievalRecord:
    """Multi-channel retrieval pair: (video, speech) indexed by a caption query."""

    video_id: str
    caption: str
    speech: str = ""

    def __post_init__(self):
        if not self.caption.strip():
            raise DataError(f"record {self.video_id!r}: empty caption")


_RECORD_TYPES = {"openqa": QaRecord, "mcqa": QaRecord, "retrieval": RetrievalRecord}


def _to_dict(record) -> dict:
    if isinstance(record, QaRecord):
        d = {"video_id": record.video_id, "question": record.question,
             "answers": list(record.answers)}
        if record.negatives is not None:
            d["negatives"] = list(record.negatives)
        if record.asr is not None:
            d["asr"] = record.asr
        return d
    return {"video_id": record.video_id, "caption": record.caption, "speech": record.speech}


def save_dataset(records, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as f:
        for rec in records:
            f.write(json.dumps(_to_dict(rec), sort_keys=True) + "\n")


def load_dataset(path: str | Path, task: str) -> list:
    """Parse and validate a record file; all-or-nothing, errors carry line numbers."""
    if task not in _RECORD_TYPES:
        raise DataError(f"unknown task {task!r}; expected one of {sorted(_RECORD_TYPES)}")
    path = Path(path)
    if not path.exists():
        raise DataError(f"dataset file not found: {path}")
    records = []
    with path.open(encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                payload = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            try:
                if task in ("openqa", "mcqa"):
                    rec = QaRecord(
                        video_id=payload["video_id"],
                        question=payload["question"],
                        answers=tuple(payload["answers"]),
                        negatives=tuple(payload["negatives"]) if "negatives" in payload else None,
                        asr=payload.get("asr"),
                    )
                    if task == "mcqa" and rec.negatives is None:
                        raise DataError("missing field 'negatives'")
                else:
                    rec = RetrievalRecord(
                        video_id=payload["video_id"],
                        caption=payload["caption"],
                        speech=payload.get("speech", ""),
                    )
            except KeyError as exc:
                raise DataError(f"{path}:{lineno}: missing field {exc.args[0]!r}") from exc
            except DataError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
            records.append(rec)
    if not records:
        raise DataError(f"{path}: no records")
    return records


def filter_multichannel(records: list[RetrievalRecord], stopwords=None) -> list[RetrievalRecord]:
    """Keep records whose speech has at least 5 non-stopword tokens."""
    if stopwords is None:
        stopwords = load_stopwords()
    kept = []
    for rec in records:
        content = [w for w in rec.speech.lower().split() if w not in stopwords]
        if len(content) >= 5:
            kept.append(rec)
    return kept


# -- synthetic planted-signal generation -----------------------------------

QUESTION_TEMPLATE = "what appears alongside the {contexts} ?"


@dataclass(frozen=True)
class SyntheticSpec:
    num_samples: int = 1000
    test_samples: int = 200
    vocab_size: int = 200
    answers_per_corpus: int = 100
    segments: int = 4
    planted_per_segment: int = 2
    context_words: int = 2
    noise_sigma: float = 0.05
    dim: int = 64
    seed: int = 0

    def __post_init__(self):
        if min(self.num_samples, self.vocab_size, self.answers_per_corpus,
               self.segments, self.planted_per_segment, self.context_words, self.dim) < 1:
            raise DataError("all synthetic spec counts must be positive")
        if self.answers_per_corpus > self.vocab_size:
            raise DataError("answers_per_corpus cannot exceed vocab_size")
        if self.noise_sigma < 0:
            raise DataError("noise_sigma must be >= 0")


@dataclass
class SyntheticData:
    spec: SyntheticSpec
    train: list[QaRecord]
    test: list[QaRecord]
    encoder: SyntheticEncoderPair
    vocab_words: tuple[str, ...]
    answer_words: tuple[str, ...]

    @property
    def corpus_sentences(self) -> list[str]:
        """Query/answer sentences of all splits; vocabulary-building input."""
        out = []
        for rec in self.train + self.test:
            out.append(rec.question)
            out.extend(rec.answers)
        return out

    def retrieval_view(self, records: list[QaRecord] | None = None) -> list[RetrievalRecord]:
        """Recast QA samples as caption-indexed multi-channel pairs."""
        records = self.train if records is None else records
        return [
            RetrievalRecord(video_id=r.video_id, caption=f"the {r.answers[0]} is here",
                            speech=r.question)
            for r in records
        ]


def generate_synthetic(spec: SyntheticSpec) -> SyntheticData:
    """Deterministic planted-signal corpus.

    Every sample draws an answer word and context words from a vocabulary of
    real nouns/verbs; each video segment plants the answer plus rotating
    context words, so the answer is present in every segment and all planted
    words appear in the sample's question/answer sentences (the answer-word
    vocabulary built from the corpus therefore covers them).
    """
    import numpy as np

    tagger = WordlistTagger()
    pool = sorted(tagger.nouns | tagger.verbs)
    if spec.vocab_size > len(pool):
        raise DataError(f"vocab_size {spec.vocab_size} exceeds bundled wordlist ({len(pool)})")
    rng = np.random.default_rng(spec.seed)
    vocab_words = tuple(sorted(rng.choice(pool, size=spec.vocab_size, replace=False)))
    answer_words = tuple(sorted(rng.choice(vocab_words, size=spec.answers_per_corpus, replace=False)))
    answer_set = set(answer_words)

    encoder = SyntheticEncoderPair(dim=spec.dim, seed=spec.seed, noise_sigma=spec.noise_sigma)

    def make_records(count: int, prefix: str) -> list[QaRecord]:
        records = []
        for i in range(count):
            vid = f"{prefix}{i:05d}"
            answer = str(rng.choice(answer_words))
            # contexts come from the non-answer part of the vocabulary so the
            # planted answer is the only corpus word among a sample's tokens
            others = [w for w in vocab_words if w not in answer_set]
            if len(others) < spec.context_words:
                others = [w for w in vocab_words if w != answer]
            contexts = [str(w) for w in rng.choice(others, size=spec.context_words, replace=False)]
            segments = []
            for s in range(spec.segments):
                planted = [answer]
                for j in range(spec.planted_per_segment - 1):
                    planted.append(contexts[(s + j) % len(contexts)])
                segments.append(planted)
            encoder.plant(vid, segments)
            question = QUESTION_TEMPLATE.format(contexts=" and the ".join(contexts))
            records.append(QaRecord(video_id=vid, question=question, answers=(answer,)))
        return records

    train = make_records(spec.num_samples, "train")
    test = make_records(spec.test_samples, "test") if spec.test_samples else []
    return SyntheticData(spec, train, test, encoder, vocab_words, answer_words)
