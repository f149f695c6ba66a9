import re
import textwrap

import numpy as np
import pytest

from fmatch import shapes
from fmatch.spectral import mesh_eigenbasis

_ACCEPTANCE = {}
_CRITERION = re.compile(r"test_criterion_(\d+)")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def tet():
    return shapes.tetrahedron(1.0)


@pytest.fixture(scope="session")
def bumpy300():
    return shapes.bumpy_sphere(300, seed=1)


@pytest.fixture(scope="session")
def bumpy300_basis(bumpy300):
    return mesh_eigenbasis(bumpy300, 40)


def write_text(path, text):
    path.write_text(textwrap.dedent(text).lstrip())
    return path


def pytest_runtest_logreport(report):
    m = _CRITERION.search(report.nodeid)
    if m is None or "test_acceptance" not in report.nodeid:
        return
    if report.when == "call" or report.outcome != "passed":
        num = int(m.group(1))
        prev = _ACCEPTANCE.get(num, (True, []))
        ok = prev[0] and report.outcome == "passed"
        notes = prev[1] + [f"{k}={v}" for k, v in report.user_properties]
        _ACCEPTANCE[num] = (ok, notes)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_ACCEPTANCE):
        ok, notes = _ACCEPTANCE[num]
        extra = f"  ({', '.join(notes)})" if notes else ""
        terminalreporter.write_line(f"criterion {num}: {'PASS' if ok else 'FAIL'}{extra}")
