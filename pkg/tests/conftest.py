import numpy as np
import pytest
import torch

from nast.numeric import set_test_mode

set_test_mode()


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def log_uniform(T, V):
    return torch.full((T, V), 1.0 / V, dtype=torch.float64).log()


def log_rows(rows):
    return torch.tensor(rows, dtype=torch.float64).log()


ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
