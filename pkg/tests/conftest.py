import numpy as np
import pytest

from rotinv.basis import build_basis
from rotinv.forward import PrecomputedWeights

# settings profile: property tests run a bounded number of examples
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def basis_nu2():
    """n = 4 with bandlimit 6: six eigenfunctions, nu_max = 2."""
    return build_basis(4, bandlimit=6.0)


@pytest.fixture(scope="session")
def weights_nu2(basis_nu2):
    return PrecomputedWeights(basis_nu2)


@pytest.fixture(scope="session")
def basis_nu3():
    """n = 4 with bandlimit 7.1: ten eigenfunctions, nu_max = 3."""
    return build_basis(4, bandlimit=7.1)


@pytest.fixture(scope="session")
def basis_8():
    return build_basis(8, count=100)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


_CRITERIA = []


@pytest.fixture
def criterion():
    """Record one pass/fail line per acceptance criterion and assert on it."""

    def record(cid, passed, detail):
        line = f"{cid} {'PASS' if passed else 'FAIL'}  {detail}"
        _CRITERIA.append(line)
        assert passed, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_CRITERIA):
            terminalreporter.write_line(line)
