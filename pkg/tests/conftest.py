"""Shared fixtures: kernel warmup and the acceptance summary block."""

import numpy as np
import pytest

from scene_cluster import kernels
from scene_cluster._accel import USE_NUMBA


@pytest.fixture(scope="session", autouse=True)
def _warm_kernels():
    # trigger jit compilation before any timed test runs
    if USE_NUMBA:
        gray = np.zeros((8, 8), np.float64)
        kernels.corner_scores(gray, 20.0)
        kernels.label8(np.zeros((4, 4), bool))
        s = -np.abs(np.arange(9, dtype=np.float64)).reshape(3, 3)
        s = (s + s.T) / 2
        kernels.ap_messages(s, 0.5, 5, 3)
    yield


_ACCEPTANCE: dict[str, bool] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    name = report.nodeid.rsplit("::", 1)[-1]
    if report.when == "call":
        _ACCEPTANCE[name] = report.passed
    elif report.when == "setup" and report.failed:
        _ACCEPTANCE[name] = False


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.write_sep("-", "acceptance")
    for name, ok in _ACCEPTANCE.items():
        terminalreporter.write_line(
            f"ACCEPTANCE {name}: {'PASSED' if ok else 'FAILED'}"
        )
