import numpy as np
import pytest

from invarlab.image import Image


def structured(size=16, seed=0):
    """Smooth random RGB image with intensities in (0, 1)."""
    rng = np.random.default_rng(seed)
    y, x = np.mgrid[0:size, 0:size] / size
    img = np.zeros((size, size, 3))
    for c in range(3):
        for _ in range(4):
            kx, ky = rng.normal(0, 3, 2)
            img[..., c] += np.cos(2 * np.pi * (kx * x + ky * y) + rng.uniform(0, 6.3))
    img = img / np.abs(img).max()
    return 0.5 + 0.45 * img


def structured_batch(n, size=16, seed=0):
    return np.stack([structured(size, seed * 1000 + k) for k in range(n)])


@pytest.fixture
def img16():
    return Image(structured(16, 3))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, filled by test_acceptance.py
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
        terminalreporter.write_line(line)
