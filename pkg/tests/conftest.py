import pytest

from coupledrec import training
from coupledrec.data import Interaction, build_dataset, build_time_grid


@pytest.fixture(autouse=True)
def _check_sampled_pairs(monkeypatch):
    monkeypatch.setattr(training, "CHECK_PAIRS", True)


@pytest.fixture
def small_interactions():
    week = 604800
    return [
        Interaction("alice", "shirt", 0),
        Interaction("alice", "hat", 10),
        Interaction("bob", "shirt", week + 5),
        Interaction("carol", "shoes", 2 * week),
        Interaction("bob", "hat", 2 * week + 1),
        Interaction("carol", "shirt", 2 * week + 7),
    ]


@pytest.fixture
def small_dataset(small_interactions):
    return build_dataset(small_interactions, build_time_grid(small_interactions))


ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def criterion():
    """``criterion(n, ok, detail)`` records one line for the acceptance summary, then asserts."""

    def record(n, ok, detail=""):
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'}" + (f"  {detail}" if detail else "")
        ACCEPTANCE[n] = line
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
