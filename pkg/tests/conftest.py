import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from pgl3.mesh import Ball, GridSpec  # noqa: E402


@pytest.fixture(scope="session")
def ball16():
    return GridSpec.around(Ball((0.0, 0.0, 0.0), 1.0), 16)


@pytest.fixture(scope="session")
def ball12():
    return GridSpec.around(Ball((0.0, 0.0, 0.0), 1.0), 12)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
