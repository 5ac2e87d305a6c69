import pytest

from mcvlr.datasets import SyntheticSpec, generate_synthetic
from mcvlr.token_retrieval import WordlistTagger, build_vocabulary

# one human-readable line per acceptance criterion, printed after the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def tagger():
    return WordlistTagger()


@pytest.fixture(scope="session")
def small_data():
    """Tiny noiseless planted corpus shared by fast tests."""
    spec = SyntheticSpec(num_samples=48, test_samples=12, vocab_size=40,
                         answers_per_corpus=16, segments=4, noise_sigma=0.0, seed=7)
    return generate_synthetic(spec)


@pytest.fixture(scope="session")
def small_vocab(small_data, tagger):
    return build_vocabulary(small_data.corpus_sentences, tagger, small_data.encoder)
