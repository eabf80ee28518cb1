import numpy as np
import pytest

from shapecomp.grid import GridSpec, OccupancyGrid


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def spec8():
    return GridSpec((8, 8, 8), 0.125, (-0.5, -0.5, -0.5))


def random_blob(spec, rng, fill=0.25):
    """Random binary grid with a guaranteed mix of 0s and 1s."""
    vals = (rng.random(spec.dims) < fill).astype(float)
    vals.flat[0], vals.flat[-1] = 1.0, 0.0
    return OccupancyGrid(spec, vals)


# -- acceptance summary ---------------------------------------------------------

ACCEPTANCE = {}


def record(number: int, title: str, ok: bool, detail: str = ""):
    """Store a criterion verdict; printed as one line per criterion at session end."""
    ACCEPTANCE[number] = (title, bool(ok), detail)
    print(f"ACCEPTANCE {number:2d} {'PASS' if ok else 'FAIL'}  {title}  {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"ACCEPTANCE {n:2d} {'PASS' if ok else 'FAIL'}  {title}  {detail}")
