import numpy as np
import pytest

from bpequant import Mask3D, Volume3D


def make_volume(arr, spacing=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0)) -> Volume3D:
    arr = np.asarray(arr, dtype=np.float32)
    return Volume3D(arr.shape, spacing, origin, arr)


def make_mask(arr, spacing=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0)) -> Mask3D:
    arr = np.asarray(arr, dtype=np.uint8)
    return Mask3D(arr.shape, spacing, origin, arr)


@pytest.fixture
def rng():
    return np.random.default_rng(20260816)
