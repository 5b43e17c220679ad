import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_convex_quad(rng, lo=0.0, hi=40.0, min_area=1.0):
    """Rotated rectangle or random convex quad inside [lo, hi]^2."""
    from textadapt.geometry import convex_hull, polygon_area

    while True:
        pts = rng.uniform(lo, hi, size=(12, 2))
        hull = convex_hull(pts)
        if len(hull) < 4:
            continue
        idx = np.sort(rng.choice(len(hull), size=4, replace=False))
        quad = hull[idx]
        if polygon_area(quad) >= min_area:
            return quad


_LINES = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_LINES] = []


@pytest.fixture
def acceptance_lines(request):
    return request.config.stash[_LINES]


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
