import numpy as np
import pytest

from blockvit.rng import SplitMix64
from blockvit.tensorio import PLAIN, ImageTensor


def random_plain_image(seed, h=32, w=32, c=3):
    s = SplitMix64(seed)
    return ImageTensor(data=s.uniforms(h * w * c).reshape(h, w, c),
                       range_tag=PLAIN)


def natural_image(seed, h=32, w=32, c=3):
    """Smooth gradient + low-frequency bumps: natural-image-like statistics
    (strong local correlation), for correlation/wrong-key oracles."""
    s = SplitMix64(seed)
    ys, xs = np.mgrid[0:h, 0:w]
    base = 0.5 + 0.25 * np.sin(2 * np.pi * xs / w) * np.cos(2 * np.pi * ys / h)
    chans = []
    for _ in range(c):
        a, b = s.uniforms(2)
        chans.append(base * (0.6 + 0.4 * a) + 0.15 * b)
    data = np.clip(np.stack(chans, axis=-1), 0.0, 1.0)
    return ImageTensor(data=data, range_tag=PLAIN)


@pytest.fixture
def tmp_path_str(tmp_path):
    return str(tmp_path)
