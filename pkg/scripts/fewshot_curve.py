"""Few-shot accuracy curve: train one variant on seeded subsets of the
synthetic dataset at several fractions, keeping the full-data iteration
count, and print accuracy per fraction.

Usage: python scripts/fewshot_curve.py [--variant text_text] [--fractions 0.01 0.1 0.5 1.0]
"""

import argparse
import math

from mcvlr.datasets import SyntheticSpec, generate_synthetic
from mcvlr.evaluation import AnswerCorpus
from mcvlr.fusion import FusionVariant
from mcvlr.token_retrieval import WordlistTagger, build_vocabulary
from mcvlr.training import TrainConfig, build_model, evaluate_open_ended, train


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--variant", default="text_text",
                        choices=[v.value for v in FusionVariant])
    parser.add_argument("--fractions", type=float, nargs="+",
                        default=[0.05, 0.1, 0.25, 0.5, 1.0])
    parser.add_argument("--epochs", type=int, default=30)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    spec = SyntheticSpec(seed=args.seed)
    data = generate_synthetic(spec)
    vocab = build_vocabulary(data.corpus_sentences, WordlistTagger(), data.encoder)
    corpus = AnswerCorpus(data.answer_words)
    variant = FusionVariant(args.variant)

    print(f"{'fraction':>8} {'train n':>8} {'test acc':>9}")
    for fraction in args.fractions:
        cfg = TrainConfig.desk_profile(variant=variant, seed=args.seed, k=4,
                                       epochs=args.epochs, fewshot_fraction=fraction)
        model = build_model(cfg, data.corpus_sentences, spec.dim)
        train(model, data.train, cfg, data.encoder, vocab)
        acc = evaluate_open_ended(model, data.test, data.encoder, vocab, cfg,
                                  corpus, credit_rule="exact")
        n = math.ceil(fraction * len(data.train))
        print(f"{fraction:>8.2f} {n:>8} {acc:>9.1%}", flush=True)


if __name__ == "__main__":
    main()
