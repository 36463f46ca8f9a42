from __future__ import annotations

import numpy as np
import pytest

from lidarseg.rangeproj import GridConfig, project
from lidarseg.scene import PointFrame, Pose


def frame_of(xyz, intensity=None, object_id=None, frame_index=0,
             pose=None) -> PointFrame:
    """Bare PointFrame around a raw coordinate list."""
    xyz = np.asarray(xyz, dtype=float).reshape(-1, 3)
    n = len(xyz)
    if intensity is None:
        intensity = np.full(n, 100.0)
    if object_id is None:
        object_id = np.full(n, -1, dtype=np.int64)
    return PointFrame(frame_index, float(frame_index) / 10.0,
                      pose or Pose.identity(), xyz, intensity, object_id)


def synth_image(xyz, grid=None, ground_z=-1.8, **kwargs):
    grid = grid or GridConfig(rows=16, cols=64, vertical_fov_min=-30.0,
                              vertical_fov_max=10.0)
    img, dropped = project(frame_of(xyz, **kwargs), grid, ground_z)
    return img, dropped


@pytest.fixture
def small_grid() -> GridConfig:
    return GridConfig(rows=9, cols=8, vertical_fov_min=-45.0,
                      vertical_fov_max=45.0)
