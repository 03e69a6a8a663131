import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parents[1]))

from utils.camera import CameraRig, Extrinsics, Intrinsics  # noqa: E402
from utils.datagen import GenConfig  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def rig():
    return CameraRig(Intrinsics(), Extrinsics(height=1.5, inclination=np.deg2rad(15.0)))


@pytest.fixture
def small_config():
    return GenConfig(count=5, seed=7, noise_sigma=0.0)


def cv_track(start=(100.0, 200.0), velocity=(2.0, -1.0), frames=30):
    """Exact constant-velocity pixel track"""
    t = np.arange(frames, dtype=float)[:, None]
    return np.asarray(start) + t * np.asarray(velocity)
