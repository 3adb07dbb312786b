import numpy as np
import pytest

from aphom.coeff import constant_field, scalar_field
from aphom.experiments import bundled_fields, resolve_field

SQRT2 = np.sqrt(2.0)


@pytest.fixture(scope="session")
def bundled():
    return {name: resolve_field(name) for name in bundled_fields()}


@pytest.fixture
def periodic1d():
    return scalar_field(1, 2.0, [(2 * np.pi, 1.0, 0.0)], period=[1.0])


@pytest.fixture
def qp1d():
    return scalar_field(1, 3.0, [(1.0, 1.0, 0.0), (SQRT2, 1.0, 0.0)])


@pytest.fixture
def const2d():
    return constant_field([[2.0, 0.5], [0.5, 1.0]], mu=0.45)


def pytest_terminal_summary(terminalreporter):
    from tests import test_acceptance as acc

    if acc.RESULTS:
        terminalreporter.section("acceptance criteria")
        for cid in sorted(acc.RESULTS):
            terminalreporter.write_line(acc.RESULTS[cid])
