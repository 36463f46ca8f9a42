"""Region growing over the range image.

Grows 4-connected regions of occupied cells whose neighboring ranges agree:
row neighbors (same column) must differ by at most vertical_max_dr, column
neighbors (same row) by at most horizontal_max_dr. Columns wrap around at
the azimuth seam when the grid covers a full revolution. Regions smaller
than min_pixels are dropped.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass

import numpy as np

from .rangeproj import RangeImage


@dataclass
class SegThresholds:
    vertical_max_dr: float = 0.3    # [m] range step allowed between rows
    horizontal_max_dr: float = 0.3  # [m] range step allowed between columns
    min_pixels: int = 3

    def validate(self) -> None:
        if self.vertical_max_dr < 0 or self.horizontal_max_dr < 0:
            raise ValueError("segmentation thresholds must be >= 0")
        if self.min_pixels < 1:
            raise ValueError("segmentation.min_pixels must be >= 1")


@dataclass
class Segment:
    """A connected region and summary geometry in the sensor frame."""

    segment_id: int
    frame_index: int
    pixels: list[tuple[int, int]]      # (row, col), sorted row-major
    point_indices: list[int]           # source point per pixel
    point_count: int
    centroid: np.ndarray               # (3,) mean of member points
    center_distance: float             # ||centroid|| from the sensor

    def __post_init__(self) -> None:
        self.centroid = np.asarray(self.centroid, dtype=float).reshape(3)


def region_grow(image: RangeImage, thresholds: SegThresholds) -> list[Segment]:
    """Segment the image. Deterministic: seeds scan in row-major order."""
    thresholds.validate()
    rows, cols = image.grid.rows, image.grid.cols
    wrap = image.grid.wraps and cols > 1
    rng_img = image.range_m
    occupied = image.point_index >= 0
    visited = np.zeros((rows, cols), dtype=bool)

    regions: list[list[tuple[int, int]]] = []
    for seed_r in range(rows):
        for seed_c in range(cols):
            if not occupied[seed_r, seed_c] or visited[seed_r, seed_c]:
                continue
            # Breadth-first growth from the seed cell.
            member: list[tuple[int, int]] = []
            queue = deque([(seed_r, seed_c)])
            visited[seed_r, seed_c] = True
            while queue:
                r, c = queue.popleft()
                member.append((r, c))
                here = rng_img[r, c]
                for dr, dc, limit in (
                    (-1, 0, thresholds.vertical_max_dr),
                    (1, 0, thresholds.vertical_max_dr),
                    (0, -1, thresholds.horizontal_max_dr),
                    (0, 1, thresholds.horizontal_max_dr),
                ):
                    nr = r + dr
                    nc = c + dc
                    if nc < 0 or nc >= cols:
                        if not wrap:
                            continue
                        nc %= cols
                    if nr < 0 or nr >= rows:
                        continue
                    if visited[nr, nc] or not occupied[nr, nc]:
                        continue
                    if abs(rng_img[nr, nc] - here) <= limit:
                        visited[nr, nc] = True
                        queue.append((nr, nc))
            if len(member) >= thresholds.min_pixels:
                regions.append(sorted(member))

    regions.sort(key=lambda px: px[0])  # order by first pixel, row-major
    segments = []
    for seg_id, pixels in enumerate(regions):
        idx = [int(image.point_index[r, c]) for r, c in pixels]
        pts = image.source_xyz[idx]
        centroid = pts.mean(axis=0)
        segments.append(Segment(
            segment_id=seg_id,
            frame_index=image.frame_index,
            pixels=pixels,
            point_indices=idx,
            point_count=len(pixels),
            centroid=centroid,
            center_distance=float(np.linalg.norm(centroid)),
        ))
    return segments


def segment_points(image: RangeImage, segment: Segment) -> np.ndarray:
    """(point_count, 3) member points, dereferenced through the image."""
    idx = [int(image.point_index[r, c]) for r, c in segment.pixels]
    if any(i < 0 for i in idx):
        raise ValueError("segment pixel is empty in this image")
    return image.source_xyz[idx]


# --------------------------------------------------------------------------
# segment dump (one JSON object per line)
# --------------------------------------------------------------------------

def segment_to_dict(segment: Segment) -> dict:
    return {
        "segment_id": segment.segment_id,
        "frame_index": segment.frame_index,
        "pixels": [[r, c] for r, c in segment.pixels],
        "point_indices": segment.point_indices,
        "point_count": segment.point_count,
        "centroid": [float(v) for v in segment.centroid],
        "center_distance": segment.center_distance,
    }


def segment_from_dict(d: dict) -> Segment:
    return Segment(
        segment_id=int(d["segment_id"]),
        frame_index=int(d["frame_index"]),
        pixels=[(int(r), int(c)) for r, c in d["pixels"]],
        point_indices=[int(i) for i in d["point_indices"]],
        point_count=int(d["point_count"]),
        centroid=np.array(d["centroid"], dtype=float),
        center_distance=float(d["center_distance"]),
    )


def write_segments(path: str, segments: list[Segment]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for seg in segments:
            fh.write(json.dumps(segment_to_dict(seg)) + "\n")


def read_segments(path: str) -> list[Segment]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(segment_from_dict(json.loads(line)))
    return out
