import math

import numpy as np
import pytest

from polyerg.corpus import regular_polygon, triangle, witness_kite
from polyerg.geometry import build_polygon

_ACCEPTANCE = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(n, title): numbered acceptance criterion")
    config.addinivalue_line("markers", "slow: takes more than a few seconds")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    marker = _ACCEPTANCE.get(report.nodeid)
    if marker is None:
        return
    n, title = marker
    prev = _ACCEPTANCE.setdefault(("result", n), [title, True])
    prev[1] = prev[1] and report.outcome == "passed"


def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("acceptance")
        if m is not None:
            _ACCEPTANCE[item.nodeid] = tuple(m.args)


def pytest_terminal_summary(terminalreporter):
    rows = sorted((k[1], v) for k, v in _ACCEPTANCE.items() if isinstance(k, tuple) and k[0] == "result")
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    for n, (title, ok) in rows:
        terminalreporter.write_line(f"ACCEPTANCE {n:2d} {'PASS' if ok else 'FAIL'}  {title}")


@pytest.fixture(scope="session")
def square():
    return build_polygon([[0, 0], [1, 0], [1, 1], [0, 1]])


@pytest.fixture(scope="session")
def equilateral():
    return regular_polygon(3)


@pytest.fixture(scope="session")
def pentagon():
    return regular_polygon(5)


@pytest.fixture(scope="session")
def heptagon():
    return regular_polygon(7)


@pytest.fixture(scope="session")
def right_triangle():
    return build_polygon([[0, 0], [4, 0], [0, 3]])


@pytest.fixture(scope="session")
def corpus_polygons():
    """Five polygons of different shapes used by the property checks."""
    return {
        "equilateral": regular_polygon(3),
        "pentagon": regular_polygon(5),
        "heptagon": regular_polygon(7),
        "obtuse": triangle([120, 30, 30], degrees=True),
        "kite": witness_kite(),
    }


def random_convex(rng, d):
    """d points on a stretched, rotated circle with angular gaps >= 0.2 rad."""
    while True:
        ang = np.sort(rng.uniform(0, 2 * math.pi, d))
        gaps = np.diff(np.concatenate([ang, [ang[0] + 2 * math.pi]]))
        if gaps.min() > 0.2:
            break
    pts = np.column_stack([np.cos(ang), np.sin(ang)])
    a = rng.uniform(0.5, 2.0)
    rot = rng.uniform(0, math.pi)
    c, s = math.cos(rot), math.sin(rot)
    pts = pts * [a, 1.0] @ np.array([[c, s], [-s, c]])
    return pts + rng.normal(size=2)
