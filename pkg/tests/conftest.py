import numpy as np
import pytest

from cru.cells import CellKind

# acceptance outcomes, printed in the terminal summary
ACCEPTANCE = {}

ALL_KINDS = list(CellKind)


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


def decomposed_batch(rng, n, L, m):
    """Random (n, L, 3, m) components plus their sums as raw inputs."""
    dec = rng.normal(size=(n, L, 3, m))
    return dec.sum(axis=2), dec


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        ok, line = ACCEPTANCE[key]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {key:>2}. {line}")
