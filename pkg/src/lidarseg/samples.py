"""Classifier samples: validity gate, cuboid crop, and canvas rasterization.

A segment passing the density gate is cropped by an axis-aligned cuboid
around its centroid and drawn onto a square three-channel canvas (height,
range, intensity). Each crop point paints exactly one canvas pixel; the
crop's pixel window is scaled to the canvas with the aspect ratio kept
and centered, so small crops become sparse dot patterns rather than
interpolated blobs.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .rangeproj import RangeImage
from .scene import PointFrame
from .segmentation import Segment


class DegenerateSegmentError(ValueError):
    """Segment centroid coincides with the sensor origin."""


class EmptyCropError(ValueError):
    """No crop point is drawable on the canvas."""


@dataclass
class SampleConfig:
    cuboid_height: float = 2.4   # [m] z extent of the crop box
    cuboid_width: float = 5.0    # [m] y extent
    cuboid_length: float = 5.0   # [m] x extent
    canvas: int = 256            # square canvas edge [px]
    height_map_min: float = 0.0  # [m] height band mapped onto 0..255
    height_map_max: float = 6.0
    min_density_ratio: float = 30.0  # point count per meter of center distance
    min_point_count: float = 8.0     # absolute point count floor

    def validate(self) -> None:
        if min(self.cuboid_height, self.cuboid_width, self.cuboid_length) <= 0:
            raise ValueError("sample cuboid extents must be positive")
        if self.canvas < 1:
            raise ValueError("sample.canvas must be >= 1")
        if not self.height_map_min < self.height_map_max:
            raise ValueError("sample.height_map_min must be below height_map_max")
        if self.min_density_ratio < 0 or self.min_point_count < 0:
            raise ValueError("sample gate thresholds must be >= 0")


@dataclass
class CuboidCrop:
    """Frame point indices inside the crop box around a segment."""

    point_indices: np.ndarray  # (M,) indices into the frame's points
    is_member: np.ndarray      # (M,) True where the point belongs to the segment

    def __post_init__(self) -> None:
        self.point_indices = np.asarray(self.point_indices, dtype=np.int64).reshape(-1)
        self.is_member = np.asarray(self.is_member, dtype=bool).reshape(-1)


@dataclass
class Sample:
    sample_id: int
    segment_id: int
    frame_index: int
    channels: np.ndarray  # (3, canvas, canvas) uint8: height, range, intensity
    label: int | None = None

    def __post_init__(self) -> None:
        self.channels = np.asarray(self.channels, dtype=np.uint8)
        if self.channels.ndim != 3 or self.channels.shape[0] != 3:
            raise ValueError("channels must have shape (3, canvas, canvas)")


def is_valid(segment: Segment, config: SampleConfig) -> bool:
    """Density gate: enough points overall and per meter of distance."""
    if segment.center_distance == 0.0:
        raise DegenerateSegmentError("segment centroid sits at the sensor origin")
    ratio = segment.point_count / segment.center_distance
    return ratio > config.min_density_ratio and segment.point_count > config.min_point_count


def crop_cuboid(frame: PointFrame, segment: Segment,
                config: SampleConfig) -> CuboidCrop:
    """All frame points inside the axis-aligned box around the centroid."""
    config.validate()
    c = segment.centroid
    d = frame.xyz - c[None, :]
    inside = (
        (np.abs(d[:, 0]) <= config.cuboid_length / 2.0)
        & (np.abs(d[:, 1]) <= config.cuboid_width / 2.0)
        & (np.abs(d[:, 2]) <= config.cuboid_height / 2.0)
    )
    idx = np.flatnonzero(inside)
    members = np.isin(idx, np.asarray(segment.point_indices, dtype=np.int64))
    return CuboidCrop(point_indices=idx, is_member=members)


def _round_half_up(values: np.ndarray) -> np.ndarray:
    return np.floor(np.asarray(values, dtype=float) + 0.5)


def _height_byte(height_m: np.ndarray, config: SampleConfig) -> np.ndarray:
    clamped = np.clip(height_m, config.height_map_min, config.height_map_max)
    unit = (clamped - config.height_map_min) / (config.height_map_max - config.height_map_min)
    return _round_half_up(unit * 255.0).astype(np.uint8)


def _circular_window(cols: np.ndarray, n_cols: int, wraps: bool) -> tuple[int, int]:
    """Start column and width of the tightest window covering the crop.

    With wrap-around the window is the complement of the largest gap in
    the circular column set, so a crop straddling the azimuth seam stays
    contiguous.
    """
    uniq = np.unique(cols)
    if not wraps or len(uniq) == 1:
        return int(uniq[0]), int(uniq[-1] - uniq[0] + 1)
    gaps = np.diff(uniq)
    wrap_gap = n_cols - uniq[-1] + uniq[0]
    k = int(np.argmax(gaps)) if gaps.size else 0
    if gaps.size and gaps[k] > wrap_gap:
        start = int(uniq[k + 1])
        width = int(n_cols - gaps[k] + 1)
    else:
        start = int(uniq[0])
        width = int(uniq[-1] - uniq[0] + 1)
    return start, width


def rasterize(crop: CuboidCrop, segment: Segment, image: RangeImage,
              config: SampleConfig) -> Sample:
    """Draw the crop onto the canvas. sample_id is assigned by the store."""
    config.validate()
    n_points = len(image.source_xyz)
    inverse = np.full(n_points, -1, dtype=np.int64)
    occ_r, occ_c = np.nonzero(image.point_index >= 0)
    inverse[image.point_index[occ_r, occ_c]] = occ_r * image.grid.cols + occ_c

    flat = inverse[crop.point_indices]
    drawable = flat >= 0  # points dropped or overwritten at projection are skipped
    if not drawable.any():
        raise EmptyCropError("no crop point is present in the range image")
    rows = flat[drawable] // image.grid.cols
    cols = flat[drawable] % image.grid.cols

    row0 = int(rows.min())
    win_h = int(rows.max()) - row0 + 1
    col0, win_w = _circular_window(cols, image.grid.cols, image.grid.wraps)
    rel_r = rows - row0
    rel_c = (cols - col0) % image.grid.cols

    canvas = config.canvas
    scale = min(canvas / win_h, canvas / win_w)
    off_r = (canvas - win_h * scale) / 2.0
    off_c = (canvas - win_w * scale) / 2.0
    u = np.floor(off_r + (rel_r + 0.5) * scale).astype(np.int64)
    v = np.floor(off_c + (rel_c + 0.5) * scale).astype(np.int64)
    u = np.clip(u, 0, canvas - 1)
    v = np.clip(v, 0, canvas - 1)

    rng_vals = image.range_m[rows, cols]
    hgt_vals = image.height_m[rows, cols]
    int_vals = image.intensity[rows, cols]

    r_lo = float(rng_vals.min())
    r_hi = float(rng_vals.max())
    if r_hi > r_lo:
        range_bytes = _round_half_up((rng_vals - r_lo) / (r_hi - r_lo) * 255.0)
    else:
        range_bytes = np.zeros(len(rng_vals))  # constant range maps to 0
    height_bytes = _height_byte(hgt_vals, config)
    inten_bytes = _round_half_up(np.clip(int_vals, 0.0, 255.0))

    channels = np.zeros((3, canvas, canvas), dtype=np.uint8)
    # Draw farthest first so the nearest point wins canvas collisions.
    order = np.argsort(-rng_vals, kind="stable")
    uu, vv = u[order], v[order]
    channels[0, uu, vv] = height_bytes[order].astype(np.uint8)
    channels[1, uu, vv] = range_bytes[order].astype(np.uint8)
    channels[2, uu, vv] = inten_bytes[order].astype(np.uint8)

    return Sample(
        sample_id=-1,
        segment_id=segment.segment_id,
        frame_index=segment.frame_index,
        channels=channels,
        label=None,
    )


# --------------------------------------------------------------------------
# sample store: fixed-size binary records plus a JSON index
# --------------------------------------------------------------------------

_HEADER = struct.Struct("<IIII")  # sample_id, segment_id, frame_index, label(255=none)


def write_sample_store(bin_path: str, index_path: str,
                       samples: list[Sample]) -> None:
    if samples:
        canvas = samples[0].channels.shape[1]
        if any(s.channels.shape != (3, canvas, canvas) for s in samples):
            raise ValueError("all samples in a store must share one canvas size")
    else:
        canvas = 0
    index = {"canvas": canvas, "records": []}
    offset = 0
    with open(bin_path, "wb") as fh:
        for s in samples:
            if s.sample_id < 0:
                raise ValueError("sample_id must be assigned before storing")
            label = 255 if s.label is None else int(s.label)
            fh.write(_HEADER.pack(s.sample_id, s.segment_id, s.frame_index, label))
            fh.write(s.channels.tobytes())  # channel-major, row-major per channel
            index["records"].append({
                "sample_id": s.sample_id,
                "segment_id": s.segment_id,
                "frame_index": s.frame_index,
                "label": None if s.label is None else int(s.label),
                "offset": offset,
            })
            offset += _HEADER.size + s.channels.nbytes
    with open(index_path, "w", encoding="utf-8") as fh:
        json.dump(index, fh)


def read_sample_store(bin_path: str, index_path: str) -> list[Sample]:
    with open(index_path, "r", encoding="utf-8") as fh:
        index = json.load(fh)
    canvas = int(index["canvas"])
    body = 3 * canvas * canvas
    samples = []
    with open(bin_path, "rb") as fh:
        for rec in index["records"]:
            fh.seek(rec["offset"])
            head = fh.read(_HEADER.size)
            if len(head) != _HEADER.size:
                raise ValueError("sample store truncated")
            sample_id, segment_id, frame_index, label = _HEADER.unpack(head)
            raw = fh.read(body)
            if len(raw) != body:
                raise ValueError("sample store truncated")
            channels = np.frombuffer(raw, dtype=np.uint8).reshape(3, canvas, canvas).copy()
            samples.append(Sample(
                sample_id=sample_id,
                segment_id=segment_id,
                frame_index=frame_index,
                channels=channels,
                label=None if label == 255 else int(label),
            ))
    return samples
