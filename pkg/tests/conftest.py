from __future__ import annotations

import numpy as np
import pytest

from biharmonic_lab.mesh import build_mesh

TWO_PI = 2 * np.pi


def order(e_coarse, e_fine):
    return float(np.log2(e_coarse / e_fine))


@pytest.fixture
def square64():
    return build_mesh(2, [TWO_PI, TWO_PI], [64, 64])


# one verdict line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: dict = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])
