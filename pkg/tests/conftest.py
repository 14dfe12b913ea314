import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from scipy.ndimage import gaussian_filter

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def smooth_texture(rng, shape=(108, 18), sigma=1.2):
    """Random texture low-passed so that block matching has a clear optimum."""
    img = gaussian_filter(rng.random(shape), sigma, mode="wrap")
    img -= img.min()
    return img / img.max()


def shifted(img, du, dv):
    """Content moved by ``(du, dv)`` pixels (periodic)."""
    return np.roll(np.roll(img, du, axis=0), dv, axis=1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance verdicts -------------------------------------------------------------

VERDICTS = []


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(VERDICTS, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
