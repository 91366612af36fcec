import numpy as np
import pytest

from cltlab.catalog import iid, random_chain, two_state
from cltlab.poisson import solve_poisson

RANDOM_SUITE_SIZE = 20


@pytest.fixture(scope="session")
def two():
    chain = two_state(0.3, 0.4)
    return chain, solve_poisson(chain)


@pytest.fixture(scope="session")
def coin():
    chain = iid((0.5, 0.5), (1.0, -1.0))
    return chain, solve_poisson(chain)


@pytest.fixture(scope="session")
def random_suite():
    out = []
    for seed in range(RANDOM_SUITE_SIZE):
        chain = random_chain(8, seed=seed, min_gap=0.2)
        out.append((chain, solve_poisson(chain)))
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# ---------------------------------------------------------------- acceptance reporting

_ACCEPTANCE = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        n = mark.args[0]
        detail = dict(item.user_properties).get("detail", "")
        prev = _ACCEPTANCE.get(n, ("PASS", ""))
        status = "PASS" if rep.passed and prev[0] == "PASS" else "FAIL"
        _ACCEPTANCE[n] = (status, detail or prev[1])


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        status, detail = _ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {status}  {detail}")
