import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))


def synthetic_scene(seed=5, size=64):
    """Structured test image: ramp + rectangles + disk + mild noise."""
    rng = np.random.default_rng(seed)
    img = np.zeros((size, size))
    yy, xx = np.mgrid[0:size, 0:size]
    img += 0.3 * (xx / (size - 1))
    img[size // 6:size // 2, size // 8:size // 2 - 4] += 0.5
    img[size // 2 + 3:size - 9, size // 2 - 2:size - 4] += 0.35
    disk = (yy - size // 3) ** 2 + (xx - 2 * size // 3) ** 2 < size * 1.25
    img[disk] = 0.9
    img += 0.05 * rng.standard_normal((size, size))
    return np.clip(img, 0.0, 1.0)


@pytest.fixture
def scene_pair():
    return synthetic_scene(5), synthetic_scene(11)
