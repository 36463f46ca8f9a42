"""Synthetic LiDAR scene generation.

Places labeled shape primitives (boxes, cylinders, vertical planar patches)
on a flat ground plane, moves an ego-mounted spinning sensor through the
scene on a straight line, and ray-casts each sweep into a per-frame point
cloud that carries ground-truth object ids.

World frame: z up, ground plane at z = -mount_height so the sensor starts
at the origin. Sensor frame: x forward, y left, z up; azimuth is measured
counterclockwise from +x.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import CLASS_NAMES

MOVABLE_CLASSES = ("person", "car", "cyclist")

# Fixed per-class return intensity. Deliberately not unique per class so
# intensity alone cannot identify a class.
DEFAULT_INTENSITY = {
    "person": 110,
    "cyclist": 110,
    "trunk": 110,
    "car": 150,
    "bush": 150,
    "building": 190,
    "unknown": 70,
}
GROUND_INTENSITY = 90

_RAY_EPS = 1e-9  # hits closer than this are treated as self-intersections


class ScenePlacementError(RuntimeError):
    """Raised when an object cannot be placed without footprint overlap."""


@dataclass
class Pose:
    """Rigid sensor pose: position [m] and sensor-to-world rotation."""

    position: np.ndarray
    rotation: np.ndarray  # 3x3, rows are world components of sensor axes

    def __post_init__(self) -> None:
        self.position = np.asarray(self.position, dtype=float).reshape(3)
        self.rotation = np.asarray(self.rotation, dtype=float).reshape(3, 3)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.zeros(3), np.eye(3))


def check_rotation(rotation: np.ndarray, tol: float = 1e-9) -> None:
    """Reject matrices that are not proper rotations to within tol."""
    r = np.asarray(rotation, dtype=float)
    if r.shape != (3, 3):
        raise ValueError(f"rotation must be 3x3, got shape {r.shape}")
    if not np.allclose(r @ r.T, np.eye(3), atol=tol):
        raise ValueError("rotation is not orthonormal")
    if abs(np.linalg.det(r) - 1.0) > tol:
        raise ValueError("rotation determinant is not +1")


@dataclass
class SensorConfig:
    """Spinning multi-beam range sensor."""

    scan_lines: int = 32            # beams, evenly spaced over the vertical FOV
    points_per_line: int = 2160     # azimuth steps per revolution
    vertical_fov_min: float = -30.67  # [deg]
    vertical_fov_max: float = 10.67   # [deg]
    max_range: float = 70.0         # [m] returns beyond this are dropped
    mount_height: float = 1.8       # [m] sensor origin above ground
    range_noise_sigma: float = 0.01  # [m] Gaussian sigma, truncated at +/-6 sigma

    def validate(self) -> None:
        if self.scan_lines < 1:
            raise ValueError("sensor.scan_lines must be >= 1")
        if self.points_per_line < 1:
            raise ValueError("sensor.points_per_line must be >= 1")
        if not self.vertical_fov_min < self.vertical_fov_max:
            raise ValueError("sensor.vertical_fov_min must be below vertical_fov_max")
        if self.max_range <= 0:
            raise ValueError("sensor.max_range must be positive")
        if self.mount_height <= 0:
            raise ValueError("sensor.mount_height must be positive")
        if self.range_noise_sigma < 0:
            raise ValueError("sensor.range_noise_sigma must be >= 0")


@dataclass
class SceneConfig:
    """What to put in the scene and how long to simulate."""

    seed: int = 0
    extent: float = 60.0            # [m] objects are placed in a square this wide
    object_counts: dict[str, int] = field(default_factory=dict)  # class -> count
    clutter_count: int = 0          # unknown-class distractor objects
    frame_count: int = 1
    frame_rate: float = 10.0        # [Hz]
    ego_speed: float = 0.0          # [m/s] straight line along +x
    intensity_map: dict[str, int] | None = None  # overrides DEFAULT_INTENSITY
    size_scale: float = 1.0         # multiplies sampled object dimensions

    def validate(self) -> None:
        if self.extent <= 0:
            raise ValueError("scene.extent must be positive")
        if self.frame_count < 1:
            raise ValueError("scene.frame_count must be >= 1")
        if self.frame_rate <= 0:
            raise ValueError("scene.frame_rate must be positive")
        if self.clutter_count < 0:
            raise ValueError("scene.clutter_count must be >= 0")
        if self.size_scale <= 0:
            raise ValueError("scene.size_scale must be positive")
        for name, count in self.object_counts.items():
            if name not in CLASS_NAMES or name == "unknown":
                raise ValueError(f"scene.object_counts: unknown class '{name}'")
            if count < 0:
                raise ValueError(f"scene.object_counts['{name}'] must be >= 0")


@dataclass
class SceneObject:
    """One primitive with a linear trajectory.

    dims by shape: box (length_x, width_y, height), cylinder (radius, height),
    plane (width, height) for a vertical rectangular patch whose outward
    normal is (cos yaw, sin yaw, 0). start is the base-center position at
    frame 0; the base sits on the ground plane.
    """

    object_id: int
    class_name: str
    shape: str  # "box" | "cylinder" | "plane"
    dims: tuple[float, ...]
    yaw: float  # [rad] about +z
    start: np.ndarray  # (3,)
    velocity: np.ndarray  # (3,) [m/s]
    intensity: int

    def __post_init__(self) -> None:
        self.start = np.asarray(self.start, dtype=float).reshape(3)
        self.velocity = np.asarray(self.velocity, dtype=float).reshape(3)

    def center_at(self, frame_index: int, frame_rate: float) -> np.ndarray:
        return self.start + self.velocity * (frame_index / frame_rate)

    def footprint_radius(self) -> float:
        if self.shape == "box":
            return math.hypot(self.dims[0], self.dims[1]) / 2.0
        if self.shape == "cylinder":
            return float(self.dims[0])
        return float(self.dims[0]) / 2.0  # plane: half width


@dataclass
class SceneTruth:
    """Everything needed to re-simulate a scene deterministically."""

    seed: int
    objects: list[SceneObject]
    ground_plane_z: float | None  # None means no ground at all
    frame_count: int
    frame_rate: float
    ego_start: np.ndarray
    ego_velocity: np.ndarray

    def __post_init__(self) -> None:
        self.ego_start = np.asarray(self.ego_start, dtype=float).reshape(3)
        self.ego_velocity = np.asarray(self.ego_velocity, dtype=float).reshape(3)


@dataclass
class PointFrame:
    """One sweep in the sensor frame.

    object_id is -1 for returns that belong to no object (ground).
    """

    frame_index: int
    timestamp: float
    sensor_pose: Pose
    xyz: np.ndarray        # (N, 3) float64 [m]
    intensity: np.ndarray  # (N,) float64
    object_id: np.ndarray  # (N,) int64

    def __post_init__(self) -> None:
        self.xyz = np.asarray(self.xyz, dtype=float).reshape(-1, 3)
        self.intensity = np.asarray(self.intensity, dtype=float).reshape(-1)
        self.object_id = np.asarray(self.object_id, dtype=np.int64).reshape(-1)
        if not (len(self.xyz) == len(self.intensity) == len(self.object_id)):
            raise ValueError("point arrays must have equal length")


# --------------------------------------------------------------------------
# scene construction
# --------------------------------------------------------------------------

# Per-class sampled dimension ranges. Box dims (lx, ly, h), cylinder (r, h).
_DIM_RANGES = {
    "person": ("cylinder", (0.25, 0.40), (1.50, 1.90)),
    "car": ("box", (3.80, 4.80), (1.70, 2.00), (1.40, 1.70)),
    "cyclist": ("box", (1.60, 2.00), (0.50, 0.70), (1.60, 1.90)),
    "trunk": ("cylinder", (0.15, 0.35), (3.50, 5.50)),
    "bush": ("cylinder", (0.80, 1.50), (0.60, 1.10)),
    "building": ("box", (6.0, 14.0), (5.0, 10.0), (4.0, 8.0)),
}
_SPEED_RANGES = {"person": (0.7, 1.3), "car": (1.5, 2.5), "cyclist": (1.2, 2.2)}

_EGO_CLEARANCE = 2.0   # [m] gap between ego path and any footprint
_PAIR_CLEARANCE = 0.5  # [m] gap between object footprints, all frames
_MAX_TRIES = 300


def _sample_dims(rng: np.random.Generator, cls: str, scale: float) -> tuple[str, tuple[float, ...]]:
    if cls == "unknown":
        # Clutter: small random box or cylinder.
        if rng.random() < 0.5:
            dims = (rng.uniform(0.3, 1.0) * scale, rng.uniform(0.3, 1.0) * scale,
                    rng.uniform(0.4, 1.4) * scale)
            return "box", dims
        return "cylinder", (rng.uniform(0.2, 0.6) * scale, rng.uniform(0.4, 1.4) * scale)
    spec = _DIM_RANGES[cls]
    shape = spec[0]
    dims = tuple(rng.uniform(lo, hi) * scale for lo, hi in spec[1:])
    return shape, dims


def _trajectory_clear(pos_a: np.ndarray, vel_a: np.ndarray, rad_a: float,
                      pos_b: np.ndarray, vel_b: np.ndarray, rad_b: float,
                      times: np.ndarray, margin: float) -> bool:
    """True if two moving footprint circles never come within margin."""
    da = pos_a[None, :2] + times[:, None] * vel_a[None, :2]
    db = pos_b[None, :2] + times[:, None] * vel_b[None, :2]
    dist = np.linalg.norm(da - db, axis=1)
    return bool(np.all(dist >= rad_a + rad_b + margin))


def generate_scene(config: SceneConfig, sensor: SensorConfig) -> SceneTruth:
    """Build a deterministic scene: same config and seed, same truth."""
    config.validate()
    sensor.validate()
    rng = np.random.default_rng(config.seed)
    intensity_map = dict(DEFAULT_INTENSITY)
    if config.intensity_map:
        intensity_map.update(config.intensity_map)

    ground_z = -sensor.mount_height
    ego_start = np.zeros(3)
    ego_velocity = np.array([config.ego_speed, 0.0, 0.0])
    times = np.arange(config.frame_count) / config.frame_rate

    wanted: list[str] = []
    for cls in CLASS_NAMES[:-1]:  # deterministic class order
        wanted.extend([cls] * config.object_counts.get(cls, 0))
    wanted.extend(["unknown"] * config.clutter_count)

    objects: list[SceneObject] = []
    half = config.extent / 2.0
    for object_id, cls in enumerate(wanted):
        shape, dims = _sample_dims(rng, cls, config.size_scale)
        radius = SceneObject(0, cls, shape, dims, 0.0, np.zeros(3),
                             np.zeros(3), 0).footprint_radius()
        placed = False
        for _ in range(_MAX_TRIES):
            x = rng.uniform(-half, half)
            y = rng.uniform(-half, half)
            yaw = rng.uniform(0.0, 2.0 * math.pi)
            if cls in MOVABLE_CLASSES:
                speed = rng.uniform(*_SPEED_RANGES[cls])
                heading = rng.uniform(0.0, 2.0 * math.pi)
                velocity = np.array([speed * math.cos(heading),
                                     speed * math.sin(heading), 0.0])
                yaw = heading  # movers face their direction of travel
            else:
                velocity = np.zeros(3)
            start = np.array([x, y, ground_z])
            if not _trajectory_clear(start, velocity, radius, ego_start,
                                     ego_velocity, 0.0, times, _EGO_CLEARANCE):
                continue
            ok = all(
                _trajectory_clear(start, velocity, radius, other.start,
                                  other.velocity, other.footprint_radius(),
                                  times, _PAIR_CLEARANCE)
                for other in objects
            )
            if not ok:
                continue
            objects.append(SceneObject(object_id, cls, shape, dims, yaw,
                                       start, velocity, intensity_map[cls]))
            placed = True
            break
        if not placed:
            raise ScenePlacementError(
                f"could not place object of class '{cls}' after {_MAX_TRIES} tries; "
                f"reduce counts or grow scene.extent")

    return SceneTruth(
        seed=config.seed,
        objects=objects,
        ground_plane_z=ground_z,
        frame_count=config.frame_count,
        frame_rate=config.frame_rate,
        ego_start=ego_start,
        ego_velocity=ego_velocity,
    )


def pose_at(truth: SceneTruth, frame_index: int) -> Pose:
    """Ego sensor pose for a frame of the configured linear trajectory."""
    if not 0 <= frame_index < truth.frame_count:
        raise ValueError(f"frame_index {frame_index} outside 0..{truth.frame_count - 1}")
    t = frame_index / truth.frame_rate
    return Pose(truth.ego_start + truth.ego_velocity * t, np.eye(3))


# --------------------------------------------------------------------------
# ray casting
# --------------------------------------------------------------------------

def ray_directions(sensor: SensorConfig) -> np.ndarray:
    """Unit ray directions in the sensor frame, (lines * steps, 3).

    Scan lines are evenly spaced from vertical_fov_min to vertical_fov_max
    inclusive; azimuth steps start at 0 (the +x axis) and advance CCW.
    """
    if sensor.scan_lines == 1:
        elev = np.array([(sensor.vertical_fov_min + sensor.vertical_fov_max) / 2.0])
    else:
        elev = np.linspace(sensor.vertical_fov_min, sensor.vertical_fov_max,
                           sensor.scan_lines)
    az = np.arange(sensor.points_per_line) * (360.0 / sensor.points_per_line)
    elev_r = np.deg2rad(elev)[:, None]
    az_r = np.deg2rad(az)[None, :]
    x = np.cos(elev_r) * np.cos(az_r)
    y = np.cos(elev_r) * np.sin(az_r)
    z = np.sin(elev_r) * np.ones_like(az_r)
    return np.stack([x, y, z], axis=-1).reshape(-1, 3)


def _ray_ground(origin: np.ndarray, dirs: np.ndarray, gz: float) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (gz - origin[2]) / dirs[:, 2]
    t = np.where(np.isfinite(t) & (t > _RAY_EPS), t, np.inf)
    return t


def _ray_box(origin: np.ndarray, dirs: np.ndarray, center: np.ndarray,
             yaw: float, dims: tuple[float, ...]) -> np.ndarray:
    lx, ly, h = dims
    c, s = math.cos(yaw), math.sin(yaw)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])  # object-to-world
    o = rot.T @ (origin - center)
    d = dirs @ rot  # row vectors: world dir -> object frame
    lo = np.array([-lx / 2.0, -ly / 2.0, 0.0])
    hi = np.array([lx / 2.0, ly / 2.0, h])
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (lo[None, :] - o[None, :]) / d
        t2 = (hi[None, :] - o[None, :]) / d
    # NaN only from 0/0 (ray in the plane of a face): treat the axis as a miss.
    t1 = np.nan_to_num(t1, nan=np.inf)
    t2 = np.nan_to_num(t2, nan=np.inf)
    t_enter = np.minimum(t1, t2).max(axis=1)
    t_exit = np.maximum(t1, t2).min(axis=1)
    hit = (t_exit >= t_enter) & (t_enter > _RAY_EPS)
    return np.where(hit, t_enter, np.inf)


def _ray_cylinder(origin: np.ndarray, dirs: np.ndarray, center: np.ndarray,
                  dims: tuple[float, ...]) -> np.ndarray:
    """Lateral surface only; the entry point must lie within the z extent."""
    radius, h = dims
    ox, oy, oz = origin - center
    dx, dy, dz = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    a = dx * dx + dy * dy
    b = 2.0 * (ox * dx + oy * dy)
    cc = ox * ox + oy * oy - radius * radius
    disc = b * b - 4.0 * a * cc
    t = np.full(len(dirs), np.inf)
    ok = (disc >= 0.0) & (a > 1e-12)
    sq = np.sqrt(disc[ok])
    t1 = (-b[ok] - sq) / (2.0 * a[ok])
    z1 = oz + t1 * dz[ok]
    good = (t1 > _RAY_EPS) & (z1 >= 0.0) & (z1 <= h)
    idx = np.flatnonzero(ok)[good]
    t[idx] = t1[good]
    return t


def _ray_plane_patch(origin: np.ndarray, dirs: np.ndarray, center: np.ndarray,
                     yaw: float, dims: tuple[float, ...]) -> np.ndarray:
    """Vertical rectangle: width along the in-plane horizontal tangent."""
    width, h = dims
    normal = np.array([math.cos(yaw), math.sin(yaw), 0.0])
    tangent = np.array([-math.sin(yaw), math.cos(yaw), 0.0])
    denom = dirs @ normal
    with np.errstate(divide="ignore", invalid="ignore"):
        t = ((center - origin) @ normal) / denom
    p = origin[None, :] + t[:, None] * dirs - center[None, :]
    u = p @ tangent
    z = p[:, 2]
    hit = (np.abs(denom) > 1e-12) & np.isfinite(t) & (t > _RAY_EPS) \
        & (np.abs(u) <= width / 2.0) & (z >= 0.0) & (z <= h)
    return np.where(hit, t, np.inf)


def _frame_noise_rng(seed: int, frame_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, frame_index, 0x5EED]))


def simulate_frame(truth: SceneTruth, frame_index: int,
                   sensor: SensorConfig) -> PointFrame:
    """Ray-cast one sweep. Pure function of (truth, frame_index, sensor)."""
    sensor.validate()
    pose = pose_at(truth, frame_index)
    dirs_s = ray_directions(sensor)
    dirs_w = dirs_s @ pose.rotation.T
    origin = pose.position

    best_t = np.full(len(dirs_w), np.inf)
    best_id = np.full(len(dirs_w), -1, dtype=np.int64)
    if truth.ground_plane_z is not None:
        best_t = _ray_ground(origin, dirs_w, truth.ground_plane_z)

    for obj in truth.objects:
        center = obj.center_at(frame_index, truth.frame_rate)
        if obj.shape == "box":
            t = _ray_box(origin, dirs_w, center, obj.yaw, obj.dims)
        elif obj.shape == "cylinder":
            t = _ray_cylinder(origin, dirs_w, center, obj.dims)
        elif obj.shape == "plane":
            t = _ray_plane_patch(origin, dirs_w, center, obj.yaw, obj.dims)
        else:
            raise ValueError(f"unknown shape '{obj.shape}'")
        closer = t < best_t
        best_t[closer] = t[closer]
        best_id[closer] = obj.object_id

    hit = np.isfinite(best_t) & (best_t <= sensor.max_range)
    t_hit = best_t[hit]
    if sensor.range_noise_sigma > 0.0:
        rng = _frame_noise_rng(truth.seed, frame_index)
        noise = np.clip(rng.standard_normal(len(t_hit)), -6.0, 6.0)
        t_hit = np.maximum(t_hit + sensor.range_noise_sigma * noise, 1e-3)

    xyz = dirs_s[hit] * t_hit[:, None]  # noise acts along the ray
    ids = best_id[hit]
    intensity = np.where(ids >= 0, 0.0, float(GROUND_INTENSITY))
    for obj in truth.objects:
        intensity[ids == obj.object_id] = float(obj.intensity)

    return PointFrame(
        frame_index=frame_index,
        timestamp=frame_index / truth.frame_rate,
        sensor_pose=pose,
        xyz=xyz,
        intensity=intensity,
        object_id=ids,
    )


def simulate_scene(truth: SceneTruth, sensor: SensorConfig) -> list[PointFrame]:
    return [simulate_frame(truth, i, sensor) for i in range(truth.frame_count)]


# --------------------------------------------------------------------------
# frame stream serialization (one JSON object per line)
# --------------------------------------------------------------------------

def frame_to_dict(frame: PointFrame) -> dict:
    points = []
    for p, inten, oid in zip(frame.xyz, frame.intensity, frame.object_id):
        points.append([float(p[0]), float(p[1]), float(p[2]), float(inten),
                       None if oid < 0 else int(oid)])
    return {
        "frame_index": frame.frame_index,
        "timestamp": frame.timestamp,
        "pose": {
            "position": [float(v) for v in frame.sensor_pose.position],
            "rotation": [float(v) for v in frame.sensor_pose.rotation.reshape(-1)],
        },
        "points": points,
    }


def frame_from_dict(d: dict) -> PointFrame:
    pose = Pose(np.array(d["pose"]["position"], dtype=float),
                np.array(d["pose"]["rotation"], dtype=float).reshape(3, 3))
    pts = d["points"]
    xyz = np.array([[p[0], p[1], p[2]] for p in pts], dtype=float).reshape(-1, 3)
    intensity = np.array([p[3] for p in pts], dtype=float)
    object_id = np.array([-1 if p[4] is None else int(p[4]) for p in pts],
                         dtype=np.int64)
    return PointFrame(int(d["frame_index"]), float(d["timestamp"]), pose,
                      xyz, intensity, object_id)


def write_frames(path: str, frames: list[PointFrame]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for frame in frames:
            fh.write(json.dumps(frame_to_dict(frame)) + "\n")


def read_frames(path: str) -> list[PointFrame]:
    frames = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                frames.append(frame_from_dict(json.loads(line)))
    return frames


# --------------------------------------------------------------------------
# scene truth serialization (single JSON document)
# --------------------------------------------------------------------------

def truth_to_dict(truth: SceneTruth) -> dict:
    return {
        "seed": truth.seed,
        "ground_plane_z": truth.ground_plane_z,
        "frame_count": truth.frame_count,
        "frame_rate": truth.frame_rate,
        "ego_start": [float(v) for v in truth.ego_start],
        "ego_velocity": [float(v) for v in truth.ego_velocity],
        "objects": [
            {
                "object_id": o.object_id,
                "class_name": o.class_name,
                "shape": o.shape,
                "dims": [float(v) for v in o.dims],
                "yaw": o.yaw,
                "start": [float(v) for v in o.start],
                "velocity": [float(v) for v in o.velocity],
                "intensity": o.intensity,
            }
            for o in truth.objects
        ],
    }


def truth_from_dict(d: dict) -> SceneTruth:
    objects = [
        SceneObject(o["object_id"], o["class_name"], o["shape"],
                    tuple(o["dims"]), float(o["yaw"]),
                    np.array(o["start"], dtype=float),
                    np.array(o["velocity"], dtype=float), int(o["intensity"]))
        for o in d["objects"]
    ]
    return SceneTruth(int(d["seed"]), objects, d["ground_plane_z"],
                      int(d["frame_count"]), float(d["frame_rate"]),
                      np.array(d["ego_start"], dtype=float),
                      np.array(d["ego_velocity"], dtype=float))


def write_truth(path: str, truth: SceneTruth) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(truth_to_dict(truth), fh, indent=1)


def read_truth(path: str) -> SceneTruth:
    with open(path, "r", encoding="utf-8") as fh:
        return truth_from_dict(json.load(fh))
