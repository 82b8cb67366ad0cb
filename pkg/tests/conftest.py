import pytest

from cirdil.channel import default_scenario
from cirdil.dil import DilConfig

SMALL = dict(epochs_initial=4, epochs_adapt=2, hidden=(16, 8), milestones=(3,))


@pytest.fixture(scope="session")
def small_data():
    """Two 300-sample tasks of the default scenario."""
    return default_scenario(count=300).generate(names={"T1", "T2"})


@pytest.fixture(scope="session")
def three_tasks():
    return default_scenario(count=240).generate(names={"T1", "T2", "T3"})


def small_cfg(method="finetune", **kw):
    return DilConfig(method=method, **(SMALL | kw))


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE = {}


def record(k, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {k}: {detail}"
    ACCEPTANCE[k] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
