import numpy as np
import pytest

from motionprob.geometry import ImageBuffer, Intrinsics
from motionprob.synthetic import desk_scene, render_synthetic_sequence

K_VGA = Intrinsics(fx=525.0, fy=525.0, cx=319.5, cy=239.5, width=640, height=480)


@pytest.fixture(scope="session")
def desk_sequence():
    """Stock 60-frame scene: moving box, static box, moving floor shadow."""
    return render_synthetic_sequence(desk_scene(n_frames=60))


@pytest.fixture(scope="session")
def short_sequence():
    """Cheap 10-frame variant for tests that only need a few frames."""
    return render_synthetic_sequence(desk_scene(n_frames=10))


def random_image(rng, h=32, w=40) -> ImageBuffer:
    return ImageBuffer(rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8))


def textured_image(rng, h=120, w=160) -> ImageBuffer:
    """Smooth random texture with enough structure for patch matching."""
    from scipy import ndimage

    base = ndimage.gaussian_filter(rng.uniform(0, 255, size=(h, w)), 2.0)
    base = (base - base.min()) / (base.max() - base.min()) * 255.0
    return ImageBuffer(np.repeat(base[:, :, None], 3, axis=2).astype(np.uint8))
