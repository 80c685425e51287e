import numpy as np
import pytest

from regfrontier.domain import HeightPanel


def random_height_panel(rng, K=3, max_nk=3, max_J=5, h=5, y_sd=0.4):
    nk = rng.integers(1, max_nk + 1, K)
    bloc = np.repeat(np.arange(K), nk)
    J = rng.integers(2, max_J + 1, len(bloc))
    building = np.repeat(np.arange(len(bloc)), J)
    y = rng.normal(0.3, y_sd, len(building))
    return HeightPanel(h, y, building, bloc)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line per acceptance criterion; printed in the terminal summary."""

    def record(name: str, ok: bool, detail: str = "") -> bool:
        line = f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  ({detail})" if detail else "")
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
