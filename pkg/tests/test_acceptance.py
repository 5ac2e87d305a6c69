"""Acceptance gate: one test and one reported pass/fail line per criterion.

The heavyweight criteria (4, 5, 7) share a single full-scale synthetic
dataset and a cache of trained models, so each (variant, seed) trains
exactly once for the whole module.
"""

import json
import math
import time

import numpy as np
import pytest
import torch

import conftest
from mcvlr.cli import run as cli_run
from mcvlr.datasets import SyntheticSpec, generate_synthetic
from mcvlr.embeddings import EmbeddingMatrix
from mcvlr.encoders import SyntheticEncoderPair, VideoFeatures
from mcvlr.evaluation import (
    AnswerCorpus,
    eval_multiple_choice,
    eval_retrieval,
    open_ended_credit,
)
from mcvlr.fusion import FusionVariant
from mcvlr.objectives import loss_gradient_check, nce_loss, symmetric_loss
from mcvlr.token_retrieval import Vocabulary, build_vocabulary, retrieve_tokens
from mcvlr.training import TrainConfig, build_model, evaluate_open_ended, train
from mcvlr.datasets import QaRecord


def report(criterion: int, ok: bool, detail: str) -> None:
    line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'} — {detail}"
    conftest.ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


# ---------------------------------------------------------------- shared scale


@pytest.fixture(scope="module")
def scale(tagger):
    """Full-scale synthetic dataset: 1,000 train / 200 test, vocab 200,
    100-answer corpus, D=64, sigma=0.05."""
    data = generate_synthetic(SyntheticSpec(seed=0))
    vocab = build_vocabulary(data.corpus_sentences, tagger, data.encoder)
    corpus = AnswerCorpus(data.answer_words)
    return data, vocab, corpus


_model_cache: dict = {}


@pytest.fixture(scope="module")
def trained(scale):
    """(variant, seed) -> (model, cfg, run_record, test_accuracy), trained once."""
    data, vocab, corpus = scale

    def get(variant: FusionVariant, seed: int = 0):
        key = (variant, seed)
        if key not in _model_cache:
            cfg = TrainConfig.desk_profile(variant=variant, seed=seed, k=4)
            model = build_model(cfg, data.corpus_sentences, data.spec.dim)
            run = train(model, data.train, cfg, data.encoder, vocab)
            acc = evaluate_open_ended(model, data.test, data.encoder, vocab, cfg,
                                      corpus, credit_rule="exact")
            _model_cache[key] = (model, cfg, run, acc)
        return _model_cache[key]

    return get


# ---------------------------------------------------------------- criterion 1


def test_criterion_1_loss_oracles():
    start = time.monotonic()
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(20):
        rows = int(rng.integers(1, 9))
        cols = int(rng.integers(1, 9))
        s = rng.normal(size=(rows, cols))
        labels = rng.integers(0, cols, size=rows)
        # independent oracle: shifted softmax cross-entropy in numpy
        shifted = s - s.max(axis=1, keepdims=True)
        logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        oracle = -logp[np.arange(rows), labels].mean()
        ours = float(nce_loss(torch.from_numpy(s), torch.from_numpy(labels)))
        worst = max(worst, abs(ours - oracle))
    sq = torch.from_numpy(rng.normal(size=(6, 6)))
    diag = torch.arange(6)
    decomposition = abs(
        float(symmetric_loss(sq))
        - 0.5 * (float(nce_loss(sq, diag)) + float(nce_loss(sq.T, diag)))
    )
    b1 = float(symmetric_loss(torch.tensor([[3.0]], dtype=torch.float64)))
    elapsed = time.monotonic() - start
    ok = worst < 1e-6 and decomposition == 0.0 and b1 == 0.0 and elapsed < 1.0
    report(1, ok, f"NCE vs numpy oracle max dev {worst:.2e} (< 1e-6), symmetric "
                  f"decomposition dev {decomposition:.1e}, B=1 loss {b1}, {elapsed:.2f}s")


# ---------------------------------------------------------------- criterion 2


def test_criterion_2_gradient_checks(scale):
    start = time.monotonic()
    rng = np.random.default_rng(1)
    worst = 0.0
    for n in (2, 4, 8, 16):
        s = torch.from_numpy(rng.normal(size=(n, n)))
        labels = torch.from_numpy(rng.integers(0, n, size=n))
        worst = max(worst, loss_gradient_check(nce_loss, s, labels))
        worst = max(worst, loss_gradient_check(symmetric_loss, s))

    # end-to-end: TEXT_TEXT training-step gradient vs finite differences on a
    # sampled slice of the token-embedding table, in float64
    data, vocab, _ = scale
    cfg = TrainConfig.desk_profile(variant=FusionVariant.TEXT_TEXT, seed=0, k=4,
                                   hidden_dim=32, ffn_dim=64, layers=1, heads=2,
                                   dropout=0.0, batch_size=8)
    model = build_model(cfg, data.corpus_sentences, data.spec.dim).double()
    from mcvlr.training import compute_video_words, make_batch

    words = compute_video_words(data.train[:8], data.encoder, vocab, cfg)
    batch, targets = make_batch(data.train[:8], data.encoder, words, cfg)
    batch.features = batch.features.double()

    def step_loss() -> torch.Tensor:
        fused = model(batch)
        answers = model.encode_answers(targets)
        return nce_loss(fused @ answers.T, torch.arange(len(targets)))

    model.zero_grad()
    step_loss().backward()
    param = model.G.tok_emb.weight
    grads = param.grad.detach().clone()
    flat = grads.flatten()
    candidates = torch.argsort(flat.abs(), descending=True)[:64]
    picks = candidates[torch.randperm(len(candidates),
                                      generator=torch.Generator().manual_seed(0))[:6]]
    h = 1e-5
    e2e_worst = 0.0
    for flat_idx in picks.tolist():
        i, j = divmod(flat_idx, param.shape[1])
        with torch.no_grad():
            param[i, j] += h
            up = float(step_loss())
            param[i, j] -= 2 * h
            down = float(step_loss())
            param[i, j] += h
        fd = (up - down) / (2 * h)
        analytic = float(grads[i, j])
        rel = abs(analytic - fd) / max(abs(analytic), abs(fd), 1e-8)
        e2e_worst = max(e2e_worst, rel)
    elapsed = time.monotonic() - start
    ok = worst < 1e-6 and e2e_worst < 1e-3 and elapsed < 60
    report(2, ok, f"loss gradient max rel dev {worst:.2e} (< 1e-6), end-to-end "
                  f"param-slice rel dev {e2e_worst:.2e} (< 1e-3), {elapsed:.1f}s")


# ---------------------------------------------------------------- criterion 3


def test_criterion_3_retrieval_oracle():
    start = time.monotonic()
    rng = np.random.default_rng(2)
    dim = 32
    exact = True
    # 10,000-word vocabulary, 100 queries, quantized scores to force ties
    vectors = (rng.integers(-8, 9, size=(10_000, dim)) / 4.0).astype(np.float64)
    words = tuple(f"w{i:05d}" for i in range(10_000))
    vocab = Vocabulary(words, EmbeddingMatrix(vectors, row_keys=words))
    for _ in range(100):
        q = (rng.integers(-8, 9, size=(1, dim)) / 4.0).astype(np.float64)
        [seg] = retrieve_tokens(VideoFeatures("v", q), vocab, k=20)
        scores = vectors @ q[0]
        oracle = sorted(range(10_000), key=lambda i: (-scores[i], i))[:20]
        exact &= [w for w, _ in seg.entries] == [words[i] for i in oracle]

    small_vecs = rng.normal(size=(300, dim))
    small_words = tuple(f"s{i}" for i in range(300))
    small = Vocabulary(small_words, EmbeddingMatrix(small_vecs, row_keys=small_words))
    invariant = True
    for _ in range(1000):
        q = rng.normal(size=(1, dim))
        scale = float(rng.uniform(0.05, 20.0))
        [a] = retrieve_tokens(VideoFeatures("v", q), small, k=8)
        [b] = retrieve_tokens(VideoFeatures("v", q * scale), small, k=8)
        invariant &= [w for w, _ in a.entries] == [w for w, _ in b.entries]
    elapsed = time.monotonic() - start
    ok = exact and invariant and elapsed < 30
    report(3, ok, f"10k-word x 100-query brute-force match (ties included): {exact}, "
                  f"rescaling invariance on 1000 cases: {invariant}, {elapsed:.1f}s")


# ---------------------------------------------------------------- criterion 4


def test_criterion_4_planted_signal_end_to_end(scale, trained, tagger):
    start = time.monotonic()
    _, _, _ = scale
    _, cfg, _, acc = trained(FusionVariant.TEXT_TEXT, seed=0)

    # noiseless companion: planted-word precision 1.0 at k = planted count
    noiseless = generate_synthetic(SyntheticSpec(
        num_samples=200, test_samples=0, noise_sigma=0.0, seed=0))
    nl_vocab = build_vocabulary(noiseless.corpus_sentences, tagger, noiseless.encoder)
    precise = True
    for rec in noiseless.train:
        feats = noiseless.encoder.encode_video(rec.video_id)
        planted = noiseless.encoder.planted_words(rec.video_id)
        for seg, ws in zip(retrieve_tokens(feats, nl_vocab, k=len(planted[0])), planted):
            precise &= {w for w, _ in seg.entries} == set(ws)
    elapsed = time.monotonic() - start
    ok = acc >= 0.95 and precise and cfg.epochs <= 30 and elapsed < 300
    report(4, ok, f"TEXT_TEXT open-ended accuracy {acc:.1%} (>= 95%) in {cfg.epochs} "
                  f"epochs, sigma=0 planted-word precision 1.0: {precise}, {elapsed:.0f}s")


# ---------------------------------------------------------------- criterion 5


def test_criterion_5_design_space_parity(trained):
    start = time.monotonic()
    accs, dims, frozen_ok = {}, set(), True
    for variant in FusionVariant:
        model, _, run, acc = trained(variant, seed=0)
        accs[variant.value] = acc
        dims.add(model.embedding_dim)
        frozen_ok &= run.frozen_hash_before == run.frozen_hash_after
    elapsed = time.monotonic() - start
    ok = (min(accs.values()) >= 0.60 and len(dims) == 1 and frozen_ok
          and elapsed < 900)
    detail = ", ".join(f"{k} {v:.1%}" for k, v in accs.items())
    report(5, ok, f"all variants via one harness: {detail} (each >= 60%, random 1%), "
                  f"shared embedding dim {dims.pop()}, frozen hashes stable: "
                  f"{frozen_ok}, {elapsed:.0f}s")


# ---------------------------------------------------------------- criterion 6


def test_criterion_6_metric_oracles():
    start = time.monotonic()
    anns = ["a", "a", "a", "a", "a"]
    credit_table_ok = (
        open_ended_credit("x", ["a", "b", "c", "d", "e"]) == 0.0
        and open_ended_credit("a", ["a", "b", "c", "d", "e"]) == 0.5
        and open_ended_credit("a", ["a", "a", "c", "d", "e"]) == 1.0
        and open_ended_credit("a", anns) == 1.0
    )

    # 3 queries with ranks 1, 3, 7 -> R@1 33.33, R@5 66.67, R@10 100 -> AveR 66.67
    scores = np.tile(np.linspace(1.0, 0.0, 12), (3, 1))
    metrics = eval_retrieval(scores, [0, 2, 6])  # descending rows -> ranks 1, 3, 7
    aver_ok = abs(metrics["AveR"] - 200.0 / 3.0) < 1e-9

    rng = np.random.default_rng(3)
    samples = [QaRecord(f"v{i}", "q", ("a",), negatives=("b", "c", "d"))
               for i in range(10_000)]
    acc = eval_multiple_choice(lambda rec, cands: rng.normal(size=4), samples)
    sigma = math.sqrt(0.25 * 0.75 / 10_000)
    binomial_ok = abs(acc - 0.25) <= 3 * sigma
    elapsed = time.monotonic() - start
    ok = credit_table_ok and aver_ok and binomial_ok and elapsed < 60
    report(6, ok, f"min(1, m/2) credit table exact: {credit_table_ok}, AveR fixture "
                  f"{metrics['AveR']:.2f} == 66.67, random 4-way accuracy {acc:.3f} "
                  f"within 3 binomial sigma of 0.25, {elapsed:.1f}s")


# ---------------------------------------------------------------- criterion 7


def test_criterion_7_reproducibility(trained, tmp_path):
    spec = {"num_samples": 32, "test_samples": 8, "vocab_size": 30,
            "answers_per_corpus": 12, "dim": 32, "seed": 9}
    spec_file = tmp_path / "spec.json"
    spec_file.write_text(json.dumps(spec))
    reports, manifests = [], []
    for name in ("a", "b"):
        root = tmp_path / name
        data = root / "data"
        assert cli_run(["synth", "--spec", str(spec_file), "--out", str(data)]) == 0
        assert cli_run(["build-vocab", "--corpus", str(data / "corpus.txt"),
                        "--encoder", str(data / "encoder.json"),
                        "--out", str(data / "vocab")]) == 0
        assert cli_run(["train", "--data", str(data), "--out", str(root / "run"),
                        "--variant", "text_text", "--epochs", "3",
                        "--batch-size", "8", "--learning-rate", "0.002",
                        "--k", "3", "--seed", "0"]) == 0
        assert cli_run(["eval", "--checkpoint", str(root / "run"),
                        "--data", str(data), "--task", "openqa",
                        "--credit-rule", "exact",
                        "--report", str(root / "report.jsonl")]) == 0
        manifests.append({
            "synth": json.loads((data / "manifest.json").read_text())["artifacts"],
            "train": json.loads((root / "run" / "manifest.json").read_text())["artifacts"],
        })
        reports.append((root / "report.jsonl").read_text())
    pipeline_ok = manifests[0] == manifests[1] and reports[0] == reports[1]

    accs = [trained(FusionVariant.TEXT_TEXT, seed=s)[3] for s in (0, 1, 2)]
    spread = 100.0 * (max(accs) - min(accs))
    ok = pipeline_ok and spread <= 2.0
    report(7, ok, f"identical manifests and metrics across pipeline reruns: "
                  f"{pipeline_ok}, 3-seed accuracies {[f'{a:.1%}' for a in accs]} "
                  f"spread {spread:.1f} points (<= 2)")


# ---------------------------------------------------------------- criterion 8


def test_criterion_8_projector_initialization(scale):
    data, _, _ = scale
    cfg = TrainConfig.desk_profile(variant=FusionVariant.CONTI_TEXT, seed=0, k=4)
    model = build_model(cfg, data.corpus_sentences, data.spec.dim)
    copied = (torch.equal(model.P.final_norm.weight, model.G.emb_norm.weight)
              and torch.equal(model.P.final_norm.bias, model.G.emb_norm.bias))
    abl_cfg = TrainConfig.desk_profile(variant=FusionVariant.CONTI_TEXT, seed=0,
                                       k=4, layernorm_init=False)
    ablated = build_model(abl_cfg, data.corpus_sentences, data.spec.dim)
    flag_works = torch.equal(ablated.P.final_norm.weight,
                             torch.ones_like(ablated.P.final_norm.weight))
    ok = copied and flag_works
    report(8, ok, f"projector final LayerNorm bitwise-equals text model's "
                  f"post-embedding LayerNorm: {copied}, layernorm_init=False "
                  f"ablation leaves default init: {flag_works}")
