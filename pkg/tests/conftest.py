import os

import hypothesis
import numpy as np
import pytest

from smoothfem.mesh import TetMesh

np.seterr(all="raise", under="ignore")

hypothesis.settings.register_profile("default", max_examples=40, deadline=None)
hypothesis.settings.register_profile("fast", max_examples=8, deadline=None)
hypothesis.settings.register_profile("thorough", max_examples=300, deadline=None)
hypothesis.settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


UNIT_TET = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], dtype=float)


@pytest.fixture
def unit_tet():
    return TetMesh(UNIT_TET, [[0, 1, 2, 3]])


@pytest.fixture
def two_tets():
    """Two unit tets mirrored through the x-y face: equal volumes, one shared face."""
    nodes = np.vstack([UNIT_TET, [[0.0, 0.0, -1.0]]])
    return TetMesh(nodes, [[0, 1, 2, 3], [0, 2, 1, 4]])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance criteria report: one line per criterion, shown after the run
_CRITERIA: list[str] = []


@pytest.fixture
def criterion():
    def record(label: str, ok: bool, detail: str = "") -> bool:
        line = f"criterion {label}: {'PASS' if ok else 'FAIL'}" + (f"  ({detail})" if detail else "")
        _CRITERIA.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERIA:
            terminalreporter.write_line(line)
