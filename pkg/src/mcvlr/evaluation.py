"""Evaluation protocols: open-ended QA accuracy, multiple-choice accuracy,
recall-based retrieval, and the token/answer overlap statistic.

Metric functions are pure: they consume a scoring callable (or a score
matrix) plus records, so they can be exercised against oracle scorers in
tests and against trained fusion models in the pipeline.
"""

from __future__ import annotations

import json
import string
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .datasets import QaRecord
from .errors import DataError


def normalize_answer(text: str) -> str:
    """Lowercase, trim, collapse internal whitespace, strip terminal punctuation.

    Applied identically to corpus construction, prediction matching and the
    overlap statistic.
    """
    collapsed = " ".join(text.lower().split())
    return collapsed.rstrip(string.punctuation + " ")


@dataclass(frozen=True)
class AnswerCorpus:
    """Unique normalized answer strings, the retrieval target set."""

    answers: tuple[str, ...]

    def __post_init__(self):
        if not self.answers:
            raise DataError("answer corpus must be nonempty")
        if len(set(self.answers)) != len(self.answers):
            raise DataError("answer corpus entries must be unique")

    @classmethod
    def from_records(cls, records: Sequence[QaRecord]) -> "AnswerCorpus":
        seen = dict.fromkeys(
            normalize_answer(a) for rec in records for a in rec.answers
        )
        return cls(tuple(seen))

    def __len__(self) -> int:
        return len(self.answers)


@dataclass(frozen=True)
class EvalReport:
    metric: str
    value: float
    sample_count: int
    config_hash: str = ""

    def to_json(self) -> str:
        return json.dumps(
            {"metric": self.metric, "value": self.value,
             "sample_count": self.sample_count, "config_hash": self.config_hash},
            sort_keys=True,
        )


def write_reports(reports: Sequence[EvalReport], path: str | Path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("".join(r.to_json() + "\n" for r in reports), encoding="utf-8")


def open_ended_credit(prediction: str, annotations: Sequence[str], rule: str = "ivqa") -> float:
    """Per-sample credit for an open-ended prediction.

    "ivqa": min(1, matches / 2) over the (typically five) annotations;
    "exact": 1 if the prediction matches any annotation, else 0.
    """
    pred = normalize_answer(prediction)
    matches = sum(1 for a in annotations if normalize_answer(a) == pred)
    if rule == "exact":
        return 1.0 if matches >= 1 else 0.0
    if rule == "ivqa":
        return min(1.0, matches / 2.0)
    raise DataError(f"unknown credit rule {rule!r}")


def eval_open_ended(
    score_fn: Callable[[QaRecord], np.ndarray],
    samples: Sequence[QaRecord],
    corpus: AnswerCorpus,
    credit_rule: str = "ivqa",
) -> float:
    """Mean per-sample credit; the prediction is the argmax-scored corpus answer."""
    if len(corpus) == 0:
        raise DataError("cannot evaluate against an empty corpus")
    if not samples:
        raise DataError("no samples to evaluate")
    total = 0.0
    for rec in samples:
        scores = np.asarray(score_fn(rec))
        if scores.shape != (len(corpus),):
            raise DataError(f"scorer returned shape {scores.shape}, expected ({len(corpus)},)")
        prediction = corpus.answers[int(np.argmax(scores))]
        total += open_ended_credit(prediction, rec.answers, credit_rule)
    return total / len(samples)


def eval_multiple_choice(
    score_fn: Callable[[QaRecord, tuple[str, ...]], np.ndarray],
    samples: Sequence[QaRecord],
) -> float:
    """Fraction of samples where the positive strictly out-scores its three
    negatives; ties count as wrong."""
    if not samples:
        raise DataError("no samples to evaluate")
    correct = 0
    for rec in samples:
        if rec.negatives is None or len(rec.negatives) != 3:
            raise DataError(f"record {rec.video_id!r}: multiple-choice needs exactly 3 negatives")
        candidates = (rec.answers[0],) + rec.negatives
        scores = np.asarray(score_fn(rec, candidates))
        if scores.shape != (4,):
            raise DataError(f"scorer returned shape {scores.shape}, expected (4,)")
        if scores[0] > scores[1:].max():
            correct += 1
    return correct / len(samples)


def retrieval_ranks(scores: np.ndarray, ground_truth: Sequence[int]) -> np.ndarray:
    """1-based rank of each query's ground-truth corpus item.

    Ties are ordered deterministically by corpus index, so an item with an
    equal score but lower index outranks the ground truth.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2:
        raise DataError(f"score matrix must be 2-D, got shape {scores.shape}")
    gt = np.asarray(ground_truth)
    if gt.shape != (scores.shape[0],):
        raise DataError("one ground-truth index per query required")
    if gt.min() < 0 or gt.max() >= scores.shape[1]:
        raise DataError("ground-truth index out of corpus range")
    ranks = np.empty(scores.shape[0], dtype=np.int64)
    for q in range(scores.shape[0]):
        g = gt[q]
        row = scores[q]
        ahead = np.count_nonzero(row > row[g]) + np.count_nonzero(row[:g] == row[g])
        ranks[q] = 1 + ahead
    return ranks


def eval_retrieval(scores: np.ndarray, ground_truth: Sequence[int]) -> dict[str, float]:
    """Recall@{1,5,10} and their average, in percent."""
    ranks = retrieval_ranks(scores, ground_truth)
    out = {}
    for n in (1, 5, 10):
        out[f"R@{n}"] = 100.0 * float(np.mean(ranks <= n))
    out["AveR"] = (out["R@1"] + out["R@5"] + out["R@10"]) / 3.0
    return out


def overlap_statistic(
    samples: Sequence[QaRecord], tokens_by_video: dict[str, Sequence[str]]
) -> float:
    """Fraction of samples whose normalized answer shares >= 1 word with the
    pooled retrieved tokens of its video."""
    if not samples:
        raise DataError("no samples")
    hits = 0
    for rec in samples:
        token_words = {normalize_answer(w) for w in tokens_by_video.get(rec.video_id, ())}
        answer_words = set()
        for a in rec.answers:
            answer_words.update(normalize_answer(a).split())
        if answer_words & token_words:
            hits += 1
    return hits / len(samples)
