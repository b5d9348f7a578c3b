import numpy as np
import pytest
from scipy import ndimage


def multiscale_noise(h, w, seed, octaves=4):
    """Smooth band-limited noise in [0,1] for synthetic test content."""
    rng = np.random.default_rng(seed)
    acc = np.zeros((h, w))
    amp = 1.0
    total = 0.0
    for o in range(octaves):
        gh = max(2, h >> (octaves - 1 - o))
        gw = max(2, w >> (octaves - 1 - o))
        coarse = rng.standard_normal((gh, gw))
        acc += amp * ndimage.zoom(coarse, (h / gh, w / gw), order=1,
                                  grid_mode=True, mode="nearest")
        total += amp
        amp *= 0.55
    acc /= total
    lo, hi = acc.min(), acc.max()
    return (acc - lo) / max(hi - lo, 1e-9)


def textured_rgb(h, w, seed):
    """Richly textured RGB float image; enough corners for feature tests."""
    rng = np.random.default_rng(seed)
    img = np.stack([multiscale_noise(h, w, seed + k) for k in range(3)], axis=2)
    # scatter hard-edged rectangles so gradient extrema are plentiful
    for _ in range(24):
        y = rng.integers(0, h - 8)
        x = rng.integers(0, w - 8)
        bh = int(rng.integers(4, min(16, h - y)))
        bw = int(rng.integers(4, min(16, w - x)))
        img[y:y + bh, x:x + bw] = rng.uniform(0, 1, 3)
    return np.clip(img, 0.0, 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
