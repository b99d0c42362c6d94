import numpy as np
import pytest
import torch

from advtransfer.harness import pool as pools
from advtransfer.harness.config import ExperimentConfig

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def toy_config(request):
    cfg = ExperimentConfig()
    cfg.model_cache = str(request.config.cache.mkdir("advtransfer-models"))
    return cfg


@pytest.fixture(scope="session")
def ctc_pool(toy_config):
    """Three seed-varied toy recognizers (dropout 0.25), trained once and cached on disk."""
    return pools.ctc_pool(toy_config)


@pytest.fixture(scope="session")
def classifier_pair(toy_config):
    return pools.classifier_pair(toy_config)


@pytest.fixture(scope="session")
def image_test_set(toy_config):
    return pools.image_sets(toy_config)[1]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


CRITERIA: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record a one-line verdict for an acceptance criterion, then assert it."""

    def record(number: int, ok: bool, detail: str):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        CRITERIA[number] = line
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[n])
