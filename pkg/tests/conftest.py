import numpy as np
import pytest

from pdmplab.core import SwitchingParams


@pytest.fixture
def p21():
    """alpha=2, beta=1 with critical lambda0 = alpha + beta."""
    return SwitchingParams(2.0, 1.0, 3.0, 2.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def random_interior(p, n, rng):
    """Uniform points of the open support by rejection."""
    from pdmplab.geometry import in_interior

    out = []
    while sum(len(o) for o in out) < n:
        x = rng.uniform(0, 1, (4 * n, 2))
        out.append(x[in_interior(p, x, tol=1e-6)])
    return np.concatenate(out)[:n]


ACCEPTANCE_LINES: dict = {}


def report(number: int, ok: bool, detail: str) -> None:
    """Record one acceptance line; printed at the end of the session."""
    ACCEPTANCE_LINES[number] = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(ACCEPTANCE_LINES[number])


def pytest_terminal_summary(terminalreporter):
    # test modules import this file as ``tests.conftest``; read that copy
    from tests.conftest import ACCEPTANCE_LINES as lines

    if lines:
        terminalreporter.section("acceptance criteria")
        for k in sorted(lines):
            terminalreporter.write_line(lines[k])
