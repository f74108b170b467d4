import numpy as np
import pytest

from jqlab.acceptance import estimator_model
from jqlab.models import Example, random_latent_model


@pytest.fixture
def small_model():
    model = random_latent_model(7, n_inputs=2, latent_vocab=2, latent_len=2, out_vocab=3, out_len=2, scale=1.0)
    return model, Example(1, (2, 0))


@pytest.fixture(scope="session")
def est_model():
    return estimator_model()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
