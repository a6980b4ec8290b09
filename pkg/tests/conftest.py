import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


CRITERIA = [f"C{i}" for i in range(1, 16)]


def pytest_configure(config):
    config._acceptance = {}
    config._acceptance_collected = set()


def pytest_collection_finish(session):
    config = session.config
    for item in session.items:
        name = item.name
        if name.startswith("test_c") and name[6:8].isdigit():
            config._acceptance_collected.add(f"C{int(name[6:8])}")


@pytest.fixture
def criterion(request):
    """Record one acceptance verdict; the summary prints a [PASS]/[FAIL] line per criterion."""
    store = request.config._acceptance

    def record(cid, ok, detail=""):
        store[cid] = (bool(ok), detail)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    store = config._acceptance
    wanted = [c for c in CRITERIA if c in config._acceptance_collected]
    if not wanted:
        return
    terminalreporter.section("acceptance criteria")
    for cid in wanted:
        ok, detail = store.get(cid, (False, "errored before a verdict"))
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {cid} {detail}")
