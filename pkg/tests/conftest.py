import numpy as np
import pytest

from finsler_heat import norms

ACCEPTANCE_LINES: list[str] = []


def record(number: int, title: str, passed: bool, detail: str = "") -> None:
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:2d} {title}"
    if detail:
        line += f" :: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)


def all_norms():
    """One representative of every variant, in 1D, 2D and 3D."""
    a2 = np.array([[2.0, 0.3], [0.3, 1.0]])
    a3 = np.array([[1.5, 0.3, 0.1], [0.3, 1.0, 0.2], [0.1, 0.2, 0.8]])
    return [
        norms.euclidean(2),
        norms.quadratic(a2),
        norms.quadratic(a3),
        norms.lp(1.5),
        norms.lp(3.0),
        norms.lp(4.0),
        norms.lp(4.0, 3),
        norms.two_slope_1d(1.0, 2.0),
        norms.randers(a2, [0.3, -0.2]),
        norms.randers(a3, [0.2, -0.1, 0.15]),
        norms.deformed(norms.randers(a2, [0.3, -0.2]), [[1.0, 0.2], [0.0, 0.8]]),
        norms.regularize(norms.lp(4.0), 0.1, "lower"),
        norms.regularize(norms.lp(1.5), 0.1, "full"),
    ]


@pytest.fixture(scope="session")
def norm_zoo():
    return all_norms()
