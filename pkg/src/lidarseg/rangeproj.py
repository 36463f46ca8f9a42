"""Spherical range-image projection and inter-frame point transforms.

Points bin into a rows x cols grid by (elevation, azimuth). Azimuth bins
are centered on multiples of the bin width so that column 0 looks straight
down +x; elevation bins tile the vertical FOV top-down, row 0 at the top.
When two points land in the same cell the nearer one wins.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .scene import PointFrame, Pose, check_rotation


@dataclass
class GridConfig:
    rows: int = 144
    cols: int = 1080
    vertical_fov_min: float = -30.67  # [deg]
    vertical_fov_max: float = 10.67   # [deg]
    azimuth_span: float = 360.0       # [deg] full revolution by default

    def validate(self) -> None:
        if self.rows < 1 or self.cols < 1:
            raise ValueError("grid.rows and grid.cols must be >= 1")
        if not self.vertical_fov_min < self.vertical_fov_max:
            raise ValueError("grid.vertical_fov_min must be below vertical_fov_max")
        if not 0.0 < self.azimuth_span <= 360.0:
            raise ValueError("grid.azimuth_span must be in (0, 360]")

    @property
    def row_bin_deg(self) -> float:
        return (self.vertical_fov_max - self.vertical_fov_min) / self.rows

    @property
    def col_bin_deg(self) -> float:
        return self.azimuth_span / self.cols

    @property
    def wraps(self) -> bool:
        return self.azimuth_span >= 360.0


@dataclass
class RangeImage:
    """Dense cell arrays plus a back-reference into the source points.

    point_index == -1 marks an empty cell. source_xyz keeps the projected
    frame's coordinates so cells can be dereferenced without the frame.
    """

    grid: GridConfig
    frame_index: int
    range_m: np.ndarray     # (rows, cols) float64, 0 where empty
    height_m: np.ndarray    # (rows, cols) float64, z - ground_z
    intensity: np.ndarray   # (rows, cols) float64
    point_index: np.ndarray  # (rows, cols) int64
    source_xyz: np.ndarray  # (N, 3) copy of the projected points

    def occupied(self) -> np.ndarray:
        return self.point_index >= 0

    def occupied_count(self) -> int:
        return int(np.count_nonzero(self.point_index >= 0))


def _angles(xyz: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(range, elevation deg, azimuth deg in [0, 360)) per point."""
    r = np.linalg.norm(xyz, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        elev = np.degrees(np.arcsin(np.clip(xyz[:, 2] / np.where(r > 0, r, 1.0),
                                            -1.0, 1.0)))
    az = np.degrees(np.arctan2(xyz[:, 1], xyz[:, 0]))
    az = np.where(az < 0.0, az + 360.0, az)
    return r, elev, az


def bin_of(xyz_point: np.ndarray, grid: GridConfig) -> tuple[int, int] | None:
    """Cell for a single point, or None if it falls outside the grid."""
    r, elev, az = _angles(np.asarray(xyz_point, dtype=float).reshape(1, 3))
    rows, cols = _bin_arrays(r, elev, az, grid)
    if rows[0] < 0:
        return None
    return int(rows[0]), int(cols[0])


def _bin_arrays(r: np.ndarray, elev: np.ndarray, az: np.ndarray,
                grid: GridConfig) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized binning; row == -1 flags a dropped point."""
    rows = np.full(len(r), -1, dtype=np.int64)
    cols = np.zeros(len(r), dtype=np.int64)

    h = grid.row_bin_deg
    w = grid.col_bin_deg
    in_fov = (r > 0.0) & (elev >= grid.vertical_fov_min) & (elev <= grid.vertical_fov_max)

    row = np.floor((grid.vertical_fov_max - elev) / h).astype(np.int64)
    row = np.clip(row, 0, grid.rows - 1)  # the exact lower edge stays inside

    if grid.wraps:
        col = np.floor((az + w / 2.0) / w).astype(np.int64) % grid.cols
        in_span = np.ones(len(r), dtype=bool)
    else:
        # Partial span is a window centered on +x: [-span/2, +span/2].
        az_c = np.where(az > 180.0, az - 360.0, az)
        in_span = (az_c >= -grid.azimuth_span / 2.0) & (az_c <= grid.azimuth_span / 2.0)
        col = np.floor((az_c + grid.azimuth_span / 2.0) / w).astype(np.int64)
        col = np.clip(col, 0, grid.cols - 1)

    keep = in_fov & in_span
    rows[keep] = row[keep]
    cols[keep] = col[keep]
    return rows, cols


def project(frame: PointFrame, grid: GridConfig,
            ground_z: float) -> tuple[RangeImage, int]:
    """Bin a frame into a range image. Returns (image, dropped_count).

    Dropped counts points outside the vertical FOV or azimuth span (and
    any non-positive ranges); cell collisions are not drops, the nearer
    point simply wins.
    """
    grid.validate()
    xyz = frame.xyz
    r, elev, az = _angles(xyz)
    rows, cols = _bin_arrays(r, elev, az, grid)
    keep = rows >= 0
    dropped = int(np.count_nonzero(~keep))

    shape = (grid.rows, grid.cols)
    img = RangeImage(
        grid=grid,
        frame_index=frame.frame_index,
        range_m=np.zeros(shape),
        height_m=np.zeros(shape),
        intensity=np.zeros(shape),
        point_index=np.full(shape, -1, dtype=np.int64),
        source_xyz=xyz.copy(),
    )
    idx = np.flatnonzero(keep)
    if len(idx):
        # Write farthest first so the nearest point lands last. Stable sort
        # keeps equal-range ties deterministic (highest original index wins).
        order = idx[np.argsort(-r[idx], kind="stable")]
        rr, cc = rows[order], cols[order]
        img.range_m[rr, cc] = r[order]
        img.height_m[rr, cc] = xyz[order, 2] - ground_z
        img.intensity[rr, cc] = frame.intensity[order]
        img.point_index[rr, cc] = order
    return img, dropped


def cell_angles(row: int, col: int, grid: GridConfig) -> tuple[float, float]:
    """Center (elevation, azimuth) of a cell in degrees."""
    if not (0 <= row < grid.rows and 0 <= col < grid.cols):
        raise ValueError(f"cell ({row}, {col}) outside {grid.rows}x{grid.cols} grid")
    elev = grid.vertical_fov_max - (row + 0.5) * grid.row_bin_deg
    if grid.wraps:
        az = (col * grid.col_bin_deg) % 360.0
    else:
        az = -grid.azimuth_span / 2.0 + (col + 0.5) * grid.col_bin_deg
    return elev, az


def back_project(row: int, col: int, range_m: float,
                 grid: GridConfig) -> np.ndarray:
    """3D point at the cell's center angles and the given range."""
    if range_m <= 0.0:
        raise ValueError("range_m must be positive")
    elev, az = cell_angles(row, col, grid)
    e = math.radians(elev)
    a = math.radians(az)
    return np.array([
        range_m * math.cos(e) * math.cos(a),
        range_m * math.cos(e) * math.sin(a),
        range_m * math.sin(e),
    ])


def transform_to_frame(points: np.ndarray, pose_src: Pose,
                       pose_dst: Pose) -> np.ndarray:
    """Re-express sensor-frame points of pose_src in pose_dst's frame."""
    check_rotation(pose_src.rotation)
    check_rotation(pose_dst.rotation)
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    world = pts @ pose_src.rotation.T + pose_src.position
    return (world - pose_dst.position) @ pose_dst.rotation


def write_pgm(path: str, image: RangeImage) -> None:
    """Debug dump: binary PGM of the range channel, min-max scaled."""
    occ = image.occupied()
    out = np.zeros((image.grid.rows, image.grid.cols), dtype=np.uint8)
    if occ.any():
        lo = image.range_m[occ].min()
        hi = image.range_m[occ].max()
        span = hi - lo
        if span > 0:
            out[occ] = np.floor((image.range_m[occ] - lo) / span * 255.0 + 0.5).astype(np.uint8)
        else:
            out[occ] = 255
    header = f"P5\n{image.grid.cols} {image.grid.rows}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(out.tobytes())
