import numpy as np
import pytest

from filaments.geometry import Curve, CurveFamily


def circle_points(M, r=1.0, center=(0.0, 0.0, 0.0), dim=3):
    s = 2 * np.pi * np.arange(M) / M
    pts = np.zeros((M, dim))
    pts[:, 0] = r * np.cos(s)
    pts[:, 1] = r * np.sin(s)
    return pts + np.asarray(center, dtype=float)[:dim]


def circle(M=64, r=1.0, center=(0.0, 0.0, 0.0), dim=3):
    return Curve(circle_points(M, r, center, dim))


def rings(centers, radii, M=32, weights=None):
    pts = np.stack([circle_points(M, r, c) for c, r in zip(centers, radii)])
    w = np.full(len(radii), 1.0 / len(radii)) if weights is None else weights
    return CurveFamily(pts, w, True)


@pytest.fixture
def three_rings():
    return rings([(0, 0, 0), (0.3, 0.2, 0.5), (-0.2, 0.1, -0.4)], [1.0, 0.8, 1.2])


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
