import numpy as np
import pytest

from ifray.geometry import Hall, OrientedBox, Scene, build_paper_scene, paper_positions

ACCEPTANCE_LINES = {}


@pytest.fixture(scope="session")
def paper_scene():
    return build_paper_scene(1)


@pytest.fixture(scope="session")
def paper_pos():
    return [tuple(p) for p in paper_positions()[1]]


@pytest.fixture
def empty_room():
    return Scene(Hall(10.0, 8.0, 3.0))


@pytest.fixture
def box_room():
    """10 x 8 x 3 room with one metal block in the middle."""
    box = OrientedBox((5.0, 4.0, 1.0), (0.5, 1.0, 1.0), 0.0, "metal", "machine")
    return Scene(Hall(10.0, 8.0, 3.0), (box,))


def record_acceptance(number, passed, detail):
    line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])


def random_points(rng, lo, hi, n):
    return rng.uniform(np.asarray(lo), np.asarray(hi), size=(n, 3))
