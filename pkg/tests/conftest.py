import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from bundleflow.grid import BaseDomain  # noqa: E402
from bundleflow.solitons import SolitonSpec, make_soliton, perturb  # noqa: E402

ACCEPTANCE_LINES = []


@pytest.fixture
def sol_spec():
    dom = BaseDomain(dim=1, sizes=(64,), periods=(2 * np.pi,))
    return SolitonSpec("sol", X=(-1.0, 1.0), domain=dom)


@pytest.fixture
def nil_spec():
    return SolitonSpec("nil", domain=BaseDomain(dim=2, sizes=(24, 24), periods=(4.0, 4.0)))


@pytest.fixture
def perturbed_sol(sol_spec):
    return perturb(make_soliton(sol_spec, 1.0), 0.05, seed=3)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].strip("[]"))):
            terminalreporter.write_line(line)
