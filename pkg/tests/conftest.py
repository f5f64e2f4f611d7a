import numpy as np
import pytest

from aamagls import array_encoding as ae
from aamagls import hrtf, pipelines, sh

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


@pytest.fixture(scope="session")
def leb2702():
    return sh.lebedev_grid(2702)


@pytest.fixture(scope="session")
def fgrid():
    return ae.FrequencyGrid(48000.0, 1024)


@pytest.fixture(scope="session")
def sphere_hrtf(leb2702, fgrid):
    return hrtf.analytic_sphere_hrtf(leb2702, fgrid)


@pytest.fixture(scope="session")
def wearable():
    return ae.default_wearable_geometry()


@pytest.fixture(scope="session")
def wearable_V(wearable, leb2702, fgrid):
    return ae.steering_matrices(wearable, leb2702, fgrid.freqs)


@pytest.fixture(scope="session")
def wearable_design(sphere_hrtf, wearable, wearable_V):
    rots = [(np.deg2rad(r), 0.0) for r in (0, 30, 60)]
    return pipelines.design(sphere_hrtf, wearable, 1, rotations=rots, V=wearable_V)


@pytest.fixture(scope="session")
def small_setup():
    """Reduced problem (Lebedev-302, nfft 256) for fast end-to-end checks."""
    grid = sh.lebedev_grid(302)
    freqs = ae.FrequencyGrid(48000.0, 256)
    h = hrtf.analytic_sphere_hrtf(grid, freqs)
    geom = ae.default_wearable_geometry()
    d = pipelines.design(h, geom, 1, rotations=[(0.0, 0.0), (np.deg2rad(60), 0.0)])
    return d
