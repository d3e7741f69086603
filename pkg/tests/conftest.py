import numpy as np
import pytest

from jointse.corpus import generate_corpus


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """Eight training pairs plus four each for valid/test."""
    out = tmp_path_factory.mktemp("corpus")
    generate_corpus(str(out), 8, 4, 4, seed=11)
    return str(out)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(RESULTS):
        terminalreporter.write_line(RESULTS[n])
