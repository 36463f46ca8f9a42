"""Inter-frame segment association, track assembly, and constraint mining.

Association is ego-motion compensated: current-frame segment points are
re-expressed in the previous sensor frame, and the overlap of a candidate
pair is the fraction of current points with a previous-segment neighbor
within match_radius. Matches are greedy one-to-one by descending overlap.
A confirmed track yields one must-link constraint per adjacent member
pair whose samples both exist; tracks labeled unknown yield none.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np
from scipy.spatial import cKDTree

from . import UNKNOWN_LABEL
from .rangeproj import transform_to_frame
from .scene import PointFrame
from .segmentation import Segment


class TrackStateError(RuntimeError):
    """Operation not allowed in the track's current state."""


@dataclass
class AssocConfig:
    match_radius: float = 0.3  # [m] nearest-neighbor acceptance distance
    min_overlap: float = 0.5   # fraction of current points that must match

    def validate(self) -> None:
        if self.match_radius <= 0:
            raise ValueError("assoc.match_radius must be positive")
        if not 0.0 < self.min_overlap <= 1.0:
            raise ValueError("assoc.min_overlap must be in (0, 1]")


class TrackMember(NamedTuple):
    frame_index: int
    segment_id: int
    sample_id: int | None


@dataclass
class Track:
    track_id: int
    members: list[TrackMember]
    status: str = "pending"  # pending | confirmed | discarded
    label: int | None = None
    truncated_at: int | None = None  # members at/after this index are cut

    def __post_init__(self) -> None:
        for a, b in zip(self.members, self.members[1:]):
            if b.frame_index != a.frame_index + 1:
                raise ValueError("track member frames must increase by exactly 1")

    def active_members(self) -> list[TrackMember]:
        if self.truncated_at is None:
            return list(self.members)
        return list(self.members[: self.truncated_at])


@dataclass(frozen=True)
class Constraint:
    """Must-link pair of sample ids, canonically ordered sample_i < sample_j."""

    sample_i: int
    sample_j: int
    track_id: int

    def __post_init__(self) -> None:
        if self.sample_i == self.sample_j:
            raise ValueError("a constraint needs two distinct samples")
        if self.sample_i > self.sample_j:
            raise ValueError("constraint samples must be ordered sample_i < sample_j")


def segment_overlap(curr_points: np.ndarray, prev_points: np.ndarray,
                    radius: float) -> float:
    """Fraction of current points with a previous point within radius."""
    if len(curr_points) == 0:
        return 0.0
    tree = cKDTree(prev_points)
    dist, _ = tree.query(curr_points, k=1, distance_upper_bound=radius * (1 + 1e-12))
    return float(np.count_nonzero(dist <= radius) / len(curr_points))


def associate(prev_frame: PointFrame, prev_segments: Sequence[Segment],
              curr_frame: PointFrame, curr_segments: Sequence[Segment],
              config: AssocConfig) -> list[tuple[int, int]]:
    """Greedy one-to-one matches [(prev_segment_id, curr_segment_id), ...]."""
    config.validate()
    if prev_frame.sensor_pose is None or curr_frame.sensor_pose is None:
        raise ValueError("both frames need a sensor pose")
    if not prev_segments or not curr_segments:
        return []

    prev_pts = {s.segment_id: prev_frame.xyz[np.asarray(s.point_indices)]
                for s in prev_segments}
    curr_pts = {}
    for s in curr_segments:
        pts = curr_frame.xyz[np.asarray(s.point_indices)]
        curr_pts[s.segment_id] = transform_to_frame(
            pts, curr_frame.sensor_pose, prev_frame.sensor_pose)

    # Centroid prune: segments farther apart than their spans cannot overlap.
    prev_summary = {
        sid: (pts.mean(axis=0), float(np.linalg.norm(pts - pts.mean(axis=0), axis=1).max()))
        for sid, pts in prev_pts.items()
    }
    candidates = []
    for cs in curr_segments:
        cpts = curr_pts[cs.segment_id]
        c_cen = cpts.mean(axis=0)
        c_rad = float(np.linalg.norm(cpts - c_cen, axis=1).max())
        for ps in prev_segments:
            p_cen, p_rad = prev_summary[ps.segment_id]
            if np.linalg.norm(c_cen - p_cen) > c_rad + p_rad + config.match_radius:
                continue
            ov = segment_overlap(cpts, prev_pts[ps.segment_id], config.match_radius)
            if ov >= config.min_overlap:
                candidates.append((ov, ps.segment_id, cs.segment_id))

    candidates.sort(key=lambda t: (-t[0], t[1], t[2]))
    used_prev: set[int] = set()
    used_curr: set[int] = set()
    matches = []
    for ov, pid, cid in candidates:
        if pid in used_prev or cid in used_curr:
            continue
        used_prev.add(pid)
        used_curr.add(cid)
        matches.append((pid, cid))
    return matches


def build_tracks(frames: Sequence[tuple[int, Sequence[int]]],
                 associations: Mapping[int, Sequence[tuple[int, int]]],
                 sample_ids: Mapping[tuple[int, int], int] | None = None) -> list[Track]:
    """Fold per-frame associations into tracks.

    frames: (frame_index, segment ids present) in increasing frame order.
    associations: keyed by the current frame index, pairs of
    (previous segment id, current segment id).
    sample_ids: optional (frame_index, segment_id) -> sample_id map.
    """
    sample_ids = sample_ids or {}
    tracks: list[Track] = []
    open_by_segment: dict[int, Track] = {}  # prev frame's segment id -> track

    last_frame: int | None = None
    for frame_index, segment_ids in frames:
        if last_frame is not None and frame_index != last_frame + 1:
            raise ValueError("frames must be consecutive")
        matched_curr: dict[int, Track] = {}
        if last_frame is not None:
            for prev_sid, curr_sid in associations.get(frame_index, ()):
                track = open_by_segment.get(prev_sid)
                if track is not None:
                    matched_curr[curr_sid] = track
        next_open: dict[int, Track] = {}
        for sid in sorted(segment_ids):
            member = TrackMember(frame_index, sid,
                                 sample_ids.get((frame_index, sid)))
            track = matched_curr.get(sid)
            if track is None:
                track = Track(track_id=len(tracks), members=[member])
                tracks.append(track)
            else:
                track.members.append(member)
            next_open[sid] = track
        open_by_segment = next_open
        last_frame = frame_index
    return tracks


def constraints_from_track(track: Track) -> list[Constraint]:
    """Adjacent-member must-link pairs from a decided track."""
    if track.status == "discarded":
        return []
    if track.status != "confirmed" or track.label is None:
        raise TrackStateError(f"track {track.track_id} has no confirmed label")
    if track.label == UNKNOWN_LABEL:
        return []  # the catch-all class never participates in constraints
    out = []
    members = track.active_members()
    for a, b in zip(members, members[1:]):
        if a.sample_id is None or b.sample_id is None:
            continue
        i, j = sorted((a.sample_id, b.sample_id))
        out.append(Constraint(sample_i=i, sample_j=j, track_id=track.track_id))
    return out


# --------------------------------------------------------------------------
# track and constraint files (one JSON object per line)
# --------------------------------------------------------------------------

def track_to_dict(track: Track) -> dict:
    return {
        "track_id": track.track_id,
        "members": [[m.frame_index, m.segment_id, m.sample_id] for m in track.members],
        "status": track.status,
        "label": track.label,
        "truncated_at": track.truncated_at,
    }


def track_from_dict(d: dict) -> Track:
    members = [TrackMember(int(f), int(s), None if x is None else int(x))
               for f, s, x in d["members"]]
    return Track(
        track_id=int(d["track_id"]),
        members=members,
        status=d.get("status", "pending"),
        label=d.get("label"),
        truncated_at=d.get("truncated_at"),
    )


def write_tracks(path: str, tracks: Iterable[Track]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for track in tracks:
            fh.write(json.dumps(track_to_dict(track)) + "\n")


def read_tracks(path: str) -> list[Track]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(track_from_dict(json.loads(line)))
    return out


def write_constraints(path: str, constraints: Iterable[Constraint]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for c in constraints:
            fh.write(json.dumps({"i": c.sample_i, "j": c.sample_j,
                                 "track_id": c.track_id}) + "\n")


def read_constraints(path: str) -> list[Constraint]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                d = json.loads(line)
                out.append(Constraint(int(d["i"]), int(d["j"]), int(d["track_id"])))
    return out
