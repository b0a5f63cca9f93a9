import numpy as np
import pytest

from wavehead import _pykernels, linalg, metrics

try:
    from wavehead import _ckernels
except ImportError:  # extension not built
    _ckernels = None

BACKENDS = {"python": _pykernels}
if _ckernels is not None:
    BACKENDS["compiled"] = _ckernels


@pytest.fixture(params=sorted(BACKENDS))
def backend(request, monkeypatch):
    """Run the test once per available kernel backend."""
    mod = BACKENDS[request.param]
    monkeypatch.setattr(linalg, "kernels", mod)
    monkeypatch.setattr(metrics, "kernels", mod)
    return mod


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def random_skew(rng, d, scale=1.0):
    A = rng.normal(scale=scale, size=(d, d))
    return A - A.T


# one line per acceptance criterion, collected by tests/test_acceptance.py
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
