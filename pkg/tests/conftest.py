import numpy as np
import pytest
from hypothesis import settings

from hopmix.nn_core import set_debug

settings.register_profile("default", deadline=None, max_examples=60, derandomize=True)
settings.load_profile("default")


@pytest.fixture(autouse=True)
def _debug_mode():
    """Every test runs with the tape's non-finite checks enabled."""
    set_debug(True)
    with np.errstate(over="raise", invalid="raise", divide="raise"):
        yield
    set_debug(False)


def pytest_terminal_summary(terminalreporter):
    from acceptance_report import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for k in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[k])
