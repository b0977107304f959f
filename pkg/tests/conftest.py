import numpy as np
import pytest

from eldkit.baysmm import SmmTrainConfig, train
from eldkit.confnet import accumulate_bow
from eldkit.corpus import build_vocabulary, vectorize
from eldkit.synth import SynthConfig, generate


def build_corpus(cfg, vocab=None):
    cns, manifest = generate(cfg)
    bows = [accumulate_bow(cn) for cn in cns]
    if vocab is None:
        vocab = build_vocabulary(bows)
    matrix, _ = vectorize(bows, vocab)
    return matrix, manifest, vocab


@pytest.fixture(scope="session")
def synth_corpus():
    """Default synthetic corpus: 2 x 200 segments, V close to 2000."""
    return build_corpus(SynthConfig())


@pytest.fixture(scope="session")
def smm_default(synth_corpus):
    matrix, _, _ = synth_corpus
    cfg = SmmTrainConfig(K=64, iters=100, seed=42)
    return cfg, train(matrix, cfg)


@pytest.fixture
def rng():
    return np.random.default_rng(20240501)


# acceptance verdicts, printed once at the end of the run
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def verdict():
    """Record ``(criterion, ok, detail)``, echo it, then fail the test if not ok."""

    def record(n, ok, detail):
        ACCEPTANCE[n] = (bool(ok), detail)
        print(f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
        assert ok, f"criterion {n}: {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
