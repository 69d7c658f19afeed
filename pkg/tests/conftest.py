import numpy as np
import pytest

from shares.closedform import parse_share


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def share(text, names):
    return parse_share(text, list(names))


def pytest_terminal_summary(terminalreporter):
    from . import test_acceptance

    results = test_acceptance.RESULTS
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        passed, detail = results[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if passed else 'FAIL'}  {detail}")
