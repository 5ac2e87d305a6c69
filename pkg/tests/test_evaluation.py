import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mcvlr.datasets import QaRecord
from mcvlr.errors import DataError
from mcvlr.evaluation import (
    AnswerCorpus,
    EvalReport,
    eval_multiple_choice,
    eval_open_ended,
    eval_retrieval,
    normalize_answer,
    open_ended_credit,
    overlap_statistic,
    retrieval_ranks,
    write_reports,
)


def rec(video_id="v", question="q ?", answers=("pan",), negatives=None):
    return QaRecord(video_id, question, tuple(answers), negatives)


# ---------------------------------------------------------------- normalization


def test_normalize_answer():
    assert normalize_answer("  Frying  PAN. ") == "frying pan"
    assert normalize_answer("pan") == normalize_answer("Pan!")
    assert normalize_answer("") == ""


def test_answer_corpus_from_records_dedupes():
    corpus = AnswerCorpus.from_records([rec(answers=("Pan", "oil")), rec(answers=("pan.",))])
    assert corpus.answers == ("pan", "oil")
    with pytest.raises(DataError):
        AnswerCorpus(())
    with pytest.raises(DataError):
        AnswerCorpus(("a", "a"))


# ---------------------------------------------------------------- open-ended


def test_credit_rule_ivqa():
    anns = ["pan", "pan", "oil", "stove", "pot"]
    assert open_ended_credit("pan", anns) == 1.0
    assert open_ended_credit("oil", anns) == 0.5
    assert open_ended_credit("knife", anns) == 0.0
    assert open_ended_credit("Pan!", anns) == 1.0  # normalization applies


def test_credit_rule_exact():
    assert open_ended_credit("oil", ["pan", "oil"], rule="exact") == 1.0
    assert open_ended_credit("knife", ["pan", "oil"], rule="exact") == 0.0
    with pytest.raises(DataError):
        open_ended_credit("x", ["x"], rule="bogus")


def test_eval_open_ended_with_oracle_scorer():
    corpus = AnswerCorpus(("pan", "oil", "knife"))
    samples = [rec(answers=("pan", "pan")), rec(answers=("oil", "knife"))]

    def oracle(r):
        target = normalize_answer(r.answers[0])
        return np.array([1.0 if a == target else 0.0 for a in corpus.answers])

    # sample 1: predict pan, 2 matches -> 1.0; sample 2: predict oil, 1 match -> 0.5
    assert eval_open_ended(oracle, samples, corpus) == pytest.approx(0.75)
    assert eval_open_ended(oracle, samples, corpus, credit_rule="exact") == 1.0


def test_eval_open_ended_validates_shapes():
    corpus = AnswerCorpus(("a", "b"))
    with pytest.raises(DataError):
        eval_open_ended(lambda r: np.zeros(3), [rec()], corpus)
    with pytest.raises(DataError):
        eval_open_ended(lambda r: np.zeros(2), [], corpus)


# ---------------------------------------------------------------- multiple choice


def test_multiple_choice_strict_inequality():
    samples = [rec(answers=("pan",), negatives=("a", "b", "c"))]

    def tied(r, candidates):
        return np.array([1.0, 1.0, 0.0, 0.0])

    def winning(r, candidates):
        return np.array([1.0, 0.5, 0.0, 0.0])

    assert eval_multiple_choice(tied, samples) == 0.0  # tie counts as wrong
    assert eval_multiple_choice(winning, samples) == 1.0


def test_multiple_choice_requires_three_negatives():
    with pytest.raises(DataError):
        eval_multiple_choice(lambda r, c: np.zeros(4), [rec(negatives=("a", "b"))])


# ---------------------------------------------------------------- retrieval


def test_retrieval_ranks_hand_case():
    scores = np.array([
        [0.9, 0.5, 0.1],   # gt 0 -> rank 1
        [0.9, 0.5, 0.1],   # gt 2 -> rank 3
        [0.5, 0.5, 0.1],   # gt 1 ties with index 0 -> lower index wins -> rank 2
    ])
    assert retrieval_ranks(scores, [0, 2, 1]).tolist() == [1, 3, 2]


def test_retrieval_tie_order_favors_lower_corpus_index():
    scores = np.array([[0.5, 0.5]])
    assert retrieval_ranks(scores, [0]).tolist() == [1]
    assert retrieval_ranks(scores, [1]).tolist() == [2]


def test_eval_retrieval_percentages():
    # query q's ground truth has exactly q better-scored items -> ranks 1..12
    n = 12
    scores = np.zeros((n, n))
    for q in range(n):
        scores[q] = np.linspace(1.0, 0.0, n)
    gt = list(range(n))  # ranks 1..12
    out = eval_retrieval(scores, gt)
    assert out["R@1"] == pytest.approx(100.0 / 12)
    assert out["R@5"] == pytest.approx(500.0 / 12)
    assert out["R@10"] == pytest.approx(1000.0 / 12)
    assert out["AveR"] == pytest.approx((out["R@1"] + out["R@5"] + out["R@10"]) / 3)


def test_retrieval_validation():
    with pytest.raises(DataError):
        retrieval_ranks(np.zeros(3), [0])
    with pytest.raises(DataError):
        retrieval_ranks(np.zeros((2, 2)), [0])
    with pytest.raises(DataError):
        retrieval_ranks(np.zeros((1, 2)), [2])


@settings(deadline=None, max_examples=40)
@given(st.integers(2, 8), st.integers(0, 1000))
def test_retrieval_ranks_match_stable_sort_oracle(n, seed):
    rng = np.random.default_rng(seed)
    scores = rng.integers(0, 4, size=(n, n)).astype(np.float64)  # frequent ties
    gt = rng.integers(0, n, size=n)
    ranks = retrieval_ranks(scores, gt)
    for q in range(n):
        order = sorted(range(n), key=lambda j: (-scores[q, j], j))
        assert ranks[q] == order.index(gt[q]) + 1


# ---------------------------------------------------------------- overlap


def test_overlap_statistic():
    samples = [
        rec(video_id="a", answers=("frying pan",)),
        rec(video_id="b", answers=("knife",)),
        rec(video_id="c", answers=("oil",)),
    ]
    tokens = {"a": ["pan", "oil"], "b": ["spoon"], "c": ["oil"]}
    assert overlap_statistic(samples, tokens) == pytest.approx(2 / 3)
    with pytest.raises(DataError):
        overlap_statistic([], tokens)


# ---------------------------------------------------------------- reports


def test_write_reports_jsonl(tmp_path):
    reports = [EvalReport("acc", 0.5, 10, "abc"), EvalReport("R@1", 25.0, 4)]
    path = tmp_path / "reports" / "eval.jsonl"
    write_reports(reports, path)
    lines = path.read_text().splitlines()
    assert len(lines) == 2
    assert json.loads(lines[0]) == {
        "metric": "acc", "value": 0.5, "sample_count": 10, "config_hash": "abc"
    }
