import numpy as np
import pytest

from corenet.dataset import DatasetConfig, generate_split
from corenet.models import ARConfig, MRConfig
from corenet.training import TrainConfig


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def tiny_data():
    """A handful of mixed-artifact pairs for fast end-to-end checks."""
    cfg = DatasetConfig(train=24, val=8, test_per_cell=1, test_snr_grid=(-4.0, 6.0), master_seed=5)
    return cfg, generate_split(cfg, "train"), generate_split(cfg, "val")


@pytest.fixture(scope="session")
def tiny_models():
    return ARConfig.uniform(4), MRConfig.uniform(4)


@pytest.fixture
def tiny_train_config():
    return TrainConfig(max_epochs=2, batch_size=8, eval_batch_size=8, seed=11)


ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture(scope="session")
def acceptance_report():
    """Collects one verdict line per acceptance criterion."""

    def record(number: int, ok: bool, detail: str) -> bool:
        ACCEPTANCE_LINES[number] = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[number])
