import numpy as np
import pytest
from scipy import ndimage

from neosynth.phantom import baby_phantom
from neosynth.volume import Geometry, ScalarVolume


def smooth_volume(shape=(64, 64, 64), seed=0, sigma=3.0, pad=0):
    """Positive, smooth random volume; ``pad`` zeroes a border of that width."""
    rng = np.random.default_rng(seed)
    v = ndimage.gaussian_filter(rng.random(shape), sigma)
    v = (v - v.min()) / (v.max() - v.min())
    if pad:
        mask = np.zeros(shape, bool)
        mask[tuple(slice(pad, -pad) for _ in shape)] = True
        v = v * ndimage.gaussian_filter(mask.astype(float), 2.0)
    return ScalarVolume(Geometry.from_spacing(shape), v.astype(np.float32))


@pytest.fixture
def smooth():
    return smooth_volume()


@pytest.fixture(scope="session")
def phantom32():
    return baby_phantom(32)


@pytest.fixture(scope="session")
def phantom64():
    return baby_phantom(64)
