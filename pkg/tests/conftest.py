import numpy as np
import pytest

from gazeattn import kernels


@pytest.fixture(params=kernels.available())
def backend(request):
    """Run the test once per available kernel backend."""
    with kernels.using(request.param) as mod:
        yield mod


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    from tests import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in test_acceptance.RESULTS:
            terminalreporter.write_line(line)
