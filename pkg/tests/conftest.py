import numpy as np
import pytest

from fedsim import models
from fedsim.data import synth_generate


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_data():
    return synth_generate(num_classes=3, input_dim=4, n_per_class=20, cluster_spread=1.0, seed=7)


@pytest.fixture
def lr_spec():
    return models.logistic_regression(input_dim=4, num_classes=3)


@pytest.fixture
def mlp_spec():
    return models.mlp(input_dim=4, num_classes=3, hidden_dim=5)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report():
    """Record one PASS/FAIL line for an acceptance criterion, then enforce it."""

    def _report(number: int, title: str, ok: bool, detail: str = "") -> None:
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}" + (f"  [{detail}]" if detail else "")
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
