import sys

import pytest

from gshn.config import Config
from gshn.data import generate_dataset

TINY = {
    "data.n_train": 40, "data.n_val": 16, "data.n_test": 16,
    "train.epochs": 3, "train.freeze_epochs": 1,
    "model.d_model": 16, "model.capacity": 32, "model.n_layers": 1,
    "model.n_heads": 2, "model.ffn_dim": 32, "snn.T": 4, "batch.size": 8,
    "batch.shortlist": 12,
}


@pytest.fixture
def tiny_config():
    return Config(TINY)


@pytest.fixture(scope="session")
def tiny_dataset():
    return generate_dataset(0, n_train=40, n_val=16, n_test=16)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "REPORT", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
