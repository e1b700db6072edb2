import numpy as np
import pytest

from rrlayer.data import prepare_mnist_subset

ACCEPTANCE_LINES = []


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def mnist_dir(tmp_path_factory):
    """The bundled 5k MNIST sample as IDX files (4,000 train / 1,000 test)."""
    out = tmp_path_factory.mktemp("mnist")
    prepare_mnist_subset(out, seed=0)
    return out


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
