import shutil
import sys
from pathlib import Path

import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

from filterfool.classifiers import load_model  # noqa: E402
from filterfool.toy import save_toy, train_toy  # noqa: E402


@pytest.fixture(scope="session")
def toy_weights(pytestconfig):
    """Directory holding ``toy.pt``; trained once and kept in the pytest cache."""
    cache = Path(pytestconfig.cache.mkdir("toy_weights"))
    path = cache / "toy.pt"
    if not path.exists():
        model, acc = train_toy()
        assert acc >= 0.95, f"toy classifier only reached {acc:.3f}"
        tmp = cache / "toy.pt.tmp"
        save_toy(model, tmp)
        shutil.move(tmp, path)
    return cache


@pytest.fixture(scope="session")
def toy_model(toy_weights):
    torch.set_num_threads(1)
    return load_model("toy", toy_weights)


@pytest.fixture
def rng():
    import numpy as np

    return np.random.default_rng(1234)


# one summary line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        status, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {status} - {detail}")
