import numpy as np
import pytest

from clustergof import _pykernels

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def _backends():
    out = [("python", _pykernels)]
    try:
        from clustergof import _ckernels

        out.append(("compiled", _ckernels))
    except ImportError:
        pass
    return out


BACKENDS = _backends()


@pytest.fixture(params=[b[1] for b in BACKENDS], ids=[b[0] for b in BACKENDS])
def backend(request):
    return request.param
