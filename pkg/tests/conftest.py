import numpy as np
import pytest

from hybridvrp.instance import load_instance, make_instance

PAPER_INSTANCES = ("A-n32-k5", "A-n33-k5", "A-n34-k5", "A-n36-k5", "A-n37-k5")


@pytest.fixture(scope="session")
def a32():
    return load_instance("A-n32-k5")


@pytest.fixture
def small_instance():
    # depot in the middle, six customers on a ring, two trucks
    pts = [(50, 50), (80, 50), (70, 75), (40, 80), (20, 50), (35, 20), (70, 25)]
    return make_instance(pts, [0, 3, 4, 2, 5, 3, 4], truck_count=2, truck_capacity=12, name="ring-n7-k2")


def random_points(rng: np.random.Generator, n: int, scale: int = 100) -> list[tuple[int, int]]:
    """Distinct integer points."""
    seen: set[tuple[int, int]] = set()
    while len(seen) < n:
        seen.add(tuple(int(v) for v in rng.integers(0, scale, 2)))
    pts = sorted(seen)
    rng.shuffle(pts)
    return pts


# one line per acceptance criterion, printed after the run (see test_acceptance.py)
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
