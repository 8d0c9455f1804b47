import numpy as np
import pytest

from ccf._jit import ENV_FLAG, HAVE_NUMBA


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(params=["numba", "numpy"])
def backend(request, monkeypatch):
    if request.param == "numba":
        if not HAVE_NUMBA:
            pytest.skip("numba not installed")
        monkeypatch.delenv(ENV_FLAG, raising=False)
    else:
        monkeypatch.setenv(ENV_FLAG, "1")
    return request.param


ACCEPTANCE = []


@pytest.fixture
def criterion():
    """Record one acceptance outcome and fail the test if it did not hold."""
    def record(number, title, ok, detail):
        ACCEPTANCE.append((number, title, bool(ok), detail))
        print("criterion %2d %s: %s (%s)" % (number, "PASS" if ok else "FAIL", title, detail))
        assert ok, "criterion %d failed: %s (%s)" % (number, title, detail)
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, ok, detail in sorted(ACCEPTANCE, key=lambda r: r[0]):
        terminalreporter.write_line("%-4s criterion %2d: %s (%s)" % ("PASS" if ok else "FAIL", number, title, detail))
