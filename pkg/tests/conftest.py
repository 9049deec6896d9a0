import pytest

from newsboy.backtest import SyntheticWorld, generate_world

_acceptance_lines: list[str] = []


@pytest.fixture(scope="session")
def acceptance_log():
    return _acceptance_lines


def pytest_terminal_summary(terminalreporter):
    if _acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in _acceptance_lines:
            terminalreporter.write_line(line)


@pytest.fixture
def small_world():
    return generate_world(SyntheticWorld(clusters=3, skus_per_cluster=20, weeks=12, seed=7))
