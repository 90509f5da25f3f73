import numpy as np
import pytest

from mvtd import instances
from mvtd.mdp import induced_chain, uniform_policy


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def one_state():
    m = instances.one_state()
    pol = uniform_policy(m)
    return m, pol, induced_chain(m, pol)


@pytest.fixture
def chain5():
    m = instances.five_state_chain()
    pol = uniform_policy(m)
    return m, pol, induced_chain(m, pol)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(results):
        r = results[num]
        terminalreporter.write_line(f"criterion {num:>2} {r.name:<17} {'PASS' if r.passed else 'FAIL'}  {r.summary}")
