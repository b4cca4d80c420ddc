import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from namerace.nncore import init_model, stacked_spec  # noqa: E402


def random_tiny_model(rng: np.random.Generator, mode: str = "lastname", max_dim=4, max_hidden=3, max_layers=2,
                      scale=0.5):
    dim = int(rng.integers(1, max_dim + 1))
    hidden = tuple(int(rng.integers(1, max_hidden + 1)) for _ in range(int(rng.integers(1, max_layers + 1))))
    model = init_model(stacked_spec(dim, hidden, mode), rng)
    for _, _, w in model.flat():
        w += rng.normal(0.0, scale, size=w.shape)
    return model


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance criteria append (number, title, status, detail) rows here; printed after the run
ACCEPTANCE_LOG: list[tuple[int, str, str, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LOG:
        return
    terminalreporter.section("acceptance criteria")
    for num, title, status, detail in sorted(ACCEPTANCE_LOG):
        terminalreporter.write_line(f"[{status}] {num}. {title}: {detail}")
