import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from thalbench.volgrid import LabelVolume, VolumeGeometry, VoxelSet  # noqa: E402


def cuboid_set(dims, lo, size) -> VoxelSet:
    mask = np.zeros(dims, dtype=bool)
    mask[lo[0]:lo[0] + size[0], lo[1]:lo[1] + size[1], lo[2]:lo[2] + size[2]] = True
    return VoxelSet.from_mask(mask, VolumeGeometry(dims))


def random_blob(rng, dims, n_seeds=3, radius=3.0) -> np.ndarray:
    """Union of a few random balls; never empty."""
    grid = np.indices(dims).transpose(1, 2, 3, 0)
    mask = np.zeros(dims, dtype=bool)
    for _ in range(n_seeds):
        c = rng.uniform(0, np.array(dims) - 1)
        r = rng.uniform(1.0, radius)
        mask |= ((grid - c) ** 2).sum(axis=3) <= r * r
    if not mask.any():
        mask[tuple(rng.integers(0, d) for d in dims)] = True
    return mask


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_volume():
    arr = np.zeros((6, 5, 4), dtype=np.int32)
    arr[1:3, 1:3, 1:3] = 3
    arr[4, 0, 0] = 7
    return LabelVolume(arr, spacing=(0.7, 0.8, 1.2))


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import RESULTS
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(RESULTS):
        ok, detail = RESULTS[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
