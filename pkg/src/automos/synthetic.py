"""Deterministic synthetic LiDAR sequences with exact moving/static truth.

Surfaces (ground, box sides and tops) are sampled directly instead of ray
cast; an optional nearest-return-per-angular-bin filter gives coarse
occlusion. All randomness derives from ``SceneSpec.seed``: scan ``t`` uses
the stream ``(seed, 0, t)`` and the pose perturbation uses ``(seed, 1)``, so
changing pose noise never changes the sampled points.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .errors import ValidationError
from .geometry import BoundingBox, canonical_box, invert_transform, make_transform
from .io import Scan, label_path, scan_path, write_labels, write_poses, write_scan

MOVING_SPEED = 0.05


@dataclass
class StaticBox:
    center: tuple  # footprint center (x, y)
    extents: tuple  # l, w, h
    yaw: float = 0.0
    base: float = 0.0  # height of the bottom face above ground
    density: float = 20.0  # points per m^2 of visible surface
    name: str = ""


@dataclass
class MovingBox:
    waypoints: list  # [(x, y), ...] polyline
    speed: float
    extents: tuple
    base: float = 0.0
    density: float = 20.0
    start_time: float = 0.0
    name: str = ""

    def state(self, t: float):
        """(x, y, heading, speed) at time ``t``; the box parks at the last waypoint."""
        pts = np.asarray(self.waypoints, dtype=np.float64)
        seg = np.diff(pts, axis=0)
        lens = np.hypot(seg[:, 0], seg[:, 1])
        total = lens.sum()
        travelled = self.speed * max(0.0, t - self.start_time)
        moving = self.speed > 0 and t >= self.start_time and travelled < total
        s = min(travelled, total)
        k = int(np.searchsorted(np.cumsum(lens), s, side="right"))
        k = min(k, len(lens) - 1)
        s_k = s - (np.cumsum(lens)[k] - lens[k])
        d = seg[k] / lens[k]
        xy = pts[k] + d * s_k
        return float(xy[0]), float(xy[1]), math.atan2(d[1], d[0]), self.speed if moving else 0.0


@dataclass
class EgoSpec:
    waypoints: list = field(default_factory=lambda: [(0.0, 0.0), (40.0, 0.0)])
    speed: float = 2.0
    sensor_height: float = 1.73


@dataclass
class SensorSpec:
    max_range: float = 80.0
    min_range: float = 2.5
    noise_sigma: float = 0.02
    n_ground: int = 12000
    angular_resolution_deg: float = 0.2
    occlusion: bool = False


@dataclass
class SceneSpec:
    seed: int = 0
    ground_extent: tuple = (-60.0, 120.0, -30.0, 30.0)  # xmin, xmax, ymin, ymax
    ground_noise: float = 0.02
    static_boxes: list = field(default_factory=list)
    moving_boxes: list = field(default_factory=list)
    ego: EgoSpec = field(default_factory=EgoSpec)
    sensor: SensorSpec = field(default_factory=SensorSpec)
    pose_noise_trans: float = 0.0  # metres, per axis
    pose_noise_yaw_deg: float = 0.0
    resample: bool = True  # fresh surface samples every scan

    def validate(self):
        for b in self.moving_boxes:
            if b.speed < 0:
                raise ValidationError(f"moving box {b.name!r}: negative speed")
            if len(b.waypoints) < 2:
                raise ValidationError(f"moving box {b.name!r}: needs at least 2 waypoints")
        for b in [*self.static_boxes, *self.moving_boxes]:
            if b.density <= 0 or min(b.extents) <= 0:
                raise ValidationError(f"box {b.name!r}: density and extents must be positive")
        if self.ego.speed < 0 or len(self.ego.waypoints) < 2:
            raise ValidationError("ego needs a nonnegative speed and at least 2 waypoints")
        if self.sensor.max_range <= self.sensor.min_range:
            raise ValidationError("sensor max_range must exceed min_range")
        return self


@dataclass
class SyntheticSequence:
    scans: list
    poses: list  # what a SLAM system would report (possibly perturbed)
    true_poses: list
    labels: list  # boolean moving masks
    object_ids: list  # per point: -1 ground, 0..S-1 static boxes, S.. moving boxes
    object_boxes: list  # per scan: world-frame BoundingBox for every object
    object_moving: list  # per scan: truth moving flag per object
    spec: SceneSpec = None

    @property
    def n_static(self) -> int:
        return len(self.spec.static_boxes)


def _sample_box_surface(rng, extents, density):
    """Local-frame samples on the four sides and the top (box base at z=0)."""
    l, w, h = extents
    faces = [  # (area, sampler)
        (w * h, lambda n: np.c_[np.full(n, 0.5 * l), rng.uniform(-0.5 * w, 0.5 * w, n), rng.uniform(0, h, n)]),
        (w * h, lambda n: np.c_[np.full(n, -0.5 * l), rng.uniform(-0.5 * w, 0.5 * w, n), rng.uniform(0, h, n)]),
        (l * h, lambda n: np.c_[rng.uniform(-0.5 * l, 0.5 * l, n), np.full(n, 0.5 * w), rng.uniform(0, h, n)]),
        (l * h, lambda n: np.c_[rng.uniform(-0.5 * l, 0.5 * l, n), np.full(n, -0.5 * w), rng.uniform(0, h, n)]),
        (l * w, lambda n: np.c_[rng.uniform(-0.5 * l, 0.5 * l, n), rng.uniform(-0.5 * w, 0.5 * w, n), np.full(n, h)]),
    ]
    parts = [f(int(rng.poisson(density * a))) for a, f in faces]
    return np.concatenate(parts) if parts else np.zeros((0, 3))


def _place(local, x, y, yaw, base):
    c, s = math.cos(yaw), math.sin(yaw)
    out = np.empty_like(local)
    out[:, 0] = x + c * local[:, 0] - s * local[:, 1]
    out[:, 1] = y + s * local[:, 0] + c * local[:, 1]
    out[:, 2] = base + local[:, 2]
    return out


def ego_pose(spec: SceneSpec, t: float) -> np.ndarray:
    mb = MovingBox(spec.ego.waypoints, spec.ego.speed, (1.0, 1.0, 1.0))
    x, y, yaw, _ = mb.state(t)
    return make_transform(yaw, (x, y, spec.ego.sensor_height))


def _occlusion_filter(xyz, res_deg):
    rng_ = np.linalg.norm(xyz, axis=1)
    az = np.arctan2(xyz[:, 1], xyz[:, 0])
    el = np.arcsin(np.clip(xyz[:, 2] / np.maximum(rng_, 1e-9), -1, 1))
    res = math.radians(res_deg)
    key = np.floor((az + math.pi) / res).astype(np.int64) * 100000 + np.floor((el + math.pi) / res).astype(np.int64)
    order = np.lexsort((rng_, key))
    first = np.ones(len(order), dtype=bool)
    first[1:] = key[order[1:]] != key[order[:-1]]
    keep = np.zeros(len(xyz), dtype=bool)
    keep[order[first]] = True
    return keep


def generate_sequence(spec: SceneSpec, n_scans: int, dt: float = 0.1) -> SyntheticSequence:
    spec.validate()
    if n_scans < 1:
        raise ValidationError("n_scans must be >= 1")
    sensor = spec.sensor
    xmin, xmax, ymin, ymax = spec.ground_extent
    S = len(spec.static_boxes)

    fixed = None
    if not spec.resample:
        frng = np.random.default_rng([spec.seed, 2])
        area = (xmax - xmin) * (ymax - ymin)
        n = int(sensor.n_ground * area / (math.pi * sensor.max_range ** 2) * 4)
        ground = np.c_[frng.uniform(xmin, xmax, n), frng.uniform(ymin, ymax, n), np.zeros(n)]
        fixed = {"ground": ground,
                 "boxes": [_sample_box_surface(frng, b.extents, b.density)
                           for b in [*spec.static_boxes, *spec.moving_boxes]]}

    prng = np.random.default_rng([spec.seed, 1])
    scans, poses, true_poses, labels, ids, all_boxes, all_moving = [], [], [], [], [], [], []
    for t in range(n_scans):
        time = t * dt
        rng = np.random.default_rng([spec.seed, 0, t])
        T = ego_pose(spec, time)
        origin = T[:2, 3]

        if fixed is None:
            u = rng.uniform(0, 1, sensor.n_ground)
            r = sensor.min_range + (sensor.max_range - sensor.min_range) * u
            phi = rng.uniform(-math.pi, math.pi, sensor.n_ground)
            gx, gy = origin[0] + r * np.cos(phi), origin[1] + r * np.sin(phi)
            ground = np.c_[gx, gy, rng.normal(0, spec.ground_noise, len(gx))]
        else:
            ground = fixed["ground"].copy()
        inside = (ground[:, 0] >= xmin) & (ground[:, 0] <= xmax) & (ground[:, 1] >= ymin) & (ground[:, 1] <= ymax)
        chunks, chunk_ids, chunk_moving = [ground[inside]], [np.full(int(inside.sum()), -1)], [np.zeros(int(inside.sum()), bool)]

        boxes, moving_flags = [], []
        for k, b in enumerate(spec.static_boxes):
            local = fixed["boxes"][k] if fixed else _sample_box_surface(rng, b.extents, b.density)
            chunks.append(_place(local, b.center[0], b.center[1], b.yaw, b.base))
            chunk_ids.append(np.full(len(local), k))
            chunk_moving.append(np.zeros(len(local), bool))
            boxes.append(canonical_box((b.center[0], b.center[1], b.base + 0.5 * b.extents[2]), b.yaw, *b.extents))
            moving_flags.append(False)
        for k, b in enumerate(spec.moving_boxes):
            x, y, yaw, v = b.state(time)
            local = fixed["boxes"][S + k] if fixed else _sample_box_surface(rng, b.extents, b.density)
            chunks.append(_place(local, x, y, yaw, b.base))
            chunk_ids.append(np.full(len(local), S + k))
            chunk_moving.append(np.full(len(local), v > MOVING_SPEED))
            boxes.append(canonical_box((x, y, b.base + 0.5 * b.extents[2]), yaw, *b.extents))
            moving_flags.append(v > MOVING_SPEED)

        world = np.concatenate(chunks)
        obj = np.concatenate(chunk_ids)
        mov = np.concatenate(chunk_moving)
        Tinv = invert_transform(T)
        local = world @ Tinv[:3, :3].T + Tinv[:3, 3]
        if sensor.noise_sigma > 0:
            local = local + rng.normal(0, sensor.noise_sigma, local.shape)
        hr = np.hypot(local[:, 0], local[:, 1])
        keep = (hr < sensor.max_range) & (hr >= sensor.min_range)
        if sensor.occlusion:
            sub = np.flatnonzero(keep)
            keep[sub[~_occlusion_filter(local[sub], sensor.angular_resolution_deg)]] = False
        local, obj, mov = local[keep], obj[keep], mov[keep]
        intensity = np.where(obj >= 0, 0.6, 0.2)
        scans.append(Scan(np.c_[local, intensity].astype(np.float32), t))
        labels.append(mov)
        ids.append(obj)
        all_boxes.append(boxes)
        all_moving.append(moving_flags)
        true_poses.append(T)

        noisy = T
        if spec.pose_noise_trans > 0 or spec.pose_noise_yaw_deg > 0:
            dxyz = prng.normal(0, spec.pose_noise_trans, 3)
            dyaw = prng.normal(0, math.radians(spec.pose_noise_yaw_deg))
            noisy = T @ make_transform(dyaw)
            noisy[:3, 3] += dxyz
        poses.append(noisy)
    return SyntheticSequence(scans, poses, true_poses, labels, ids, all_boxes, all_moving, spec)


def write_sequence(seq: SyntheticSequence, out_dir) -> Path:
    """Write ``velodyne/*.bin``, ``poses.txt`` and truth ``labels/*.label``."""
    out = Path(out_dir)
    (out / "velodyne").mkdir(parents=True, exist_ok=True)
    (out / "labels").mkdir(parents=True, exist_ok=True)
    for scan, lab in zip(seq.scans, seq.labels):
        write_scan(scan, scan_path(out / "velodyne", scan.index))
        write_labels(lab, label_path(out / "labels", scan.index))
    write_poses(seq.poses, out / "poses.txt")
    write_poses(seq.true_poses, out / "poses_true.txt")
    return out


# --- scene files -----------------------------------------------------------

def scene_to_dict(spec: SceneSpec) -> dict:
    d = asdict(spec)

    def plain(x):
        if isinstance(x, (list, tuple)):
            return [plain(v) for v in x]
        if isinstance(x, dict):
            return {k: plain(v) for k, v in x.items()}
        return x
    return plain(d)


def scene_from_dict(d: dict) -> SceneSpec:
    d = dict(d)
    known = set(SceneSpec.__dataclass_fields__)
    unknown = set(d) - known - {"n_scans", "dt"}
    if unknown:
        raise ValidationError(f"unknown scene keys: {sorted(unknown)}")
    try:
        statics = [StaticBox(**b) for b in d.pop("static_boxes", [])]
        movers = [MovingBox(**b) for b in d.pop("moving_boxes", [])]
        ego = EgoSpec(**d.pop("ego", {}))
        sensor = SensorSpec(**d.pop("sensor", {}))
    except TypeError as e:
        raise ValidationError(f"invalid scene: {e}") from None
    d.pop("n_scans", None)
    d.pop("dt", None)
    if "ground_extent" in d:
        d["ground_extent"] = tuple(d["ground_extent"])
    return SceneSpec(static_boxes=statics, moving_boxes=movers, ego=ego, sensor=sensor, **d).validate()


def load_scene(path):
    """Returns ``(spec, n_scans, dt)`` from a YAML scene file."""
    with open(path) as f:
        d = yaml.safe_load(f) or {}
    if not isinstance(d, dict):
        raise ValidationError(f"{path}: scene file must be a mapping")
    return scene_from_dict(d), int(d.get("n_scans", 100)), float(d.get("dt", 0.1))


def save_scene(spec: SceneSpec, path, n_scans: int = 100, dt: float = 0.1):
    d = scene_to_dict(spec)
    d["n_scans"] = n_scans
    d["dt"] = dt
    with open(path, "w") as f:
        yaml.safe_dump(d, f, sort_keys=False)


# --- stock scenes ------------------------------------------------------------

def urban_scene(seed: int = 0, pose_noise_trans: float = 0.02, pose_noise_yaw_deg: float = 0.2,
                **overrides) -> SceneSpec:
    """A street with two parked cars beside the ego lane, buildings, street
    furniture, two cars, a cyclist and a crossing pedestrian."""
    statics = [
        StaticBox((12.0, -3.6), (4.5, 1.8, 1.45), base=0.2, density=40, name="parked_car_a"),
        StaticBox((27.0, -3.6), (4.5, 1.8, 1.45), base=0.2, density=40, name="parked_car_b"),
        StaticBox((20.0, 16.0), (40.0, 2.0, 8.0), density=4, name="building_north"),
        StaticBox((20.0, -16.0), (40.0, 2.0, 6.0), density=4, name="building_south"),
        StaticBox((5.0, -5.5), (0.3, 0.3, 6.0), density=40, name="pole"),
        StaticBox((40.0, -7.0), (3.0, 1.5, 2.5), density=20, name="kiosk"),
        StaticBox((-5.0, 6.5), (0.8, 0.8, 1.2), density=30, name="bin"),
    ]
    movers = [
        MovingBox([(-30.0, 3.5), (70.0, 3.5)], 5.0, (4.5, 1.8, 1.5), base=0.25, density=40, name="car"),
        MovingBox([(50.0, 9.0), (-10.0, 9.0)], 3.0, (5.0, 2.0, 2.0), base=0.3, density=40, name="van"),
        MovingBox([(-5.0, -9.5), (45.0, -9.5)], 2.0, (1.8, 0.6, 1.7), base=0.25, density=30, name="cyclist"),
        MovingBox([(60.0, -6.0), (60.0, 14.0)], 1.0, (0.6, 0.5, 1.75), base=0.25, density=30, name="pedestrian"),
    ]
    spec = SceneSpec(seed=seed, static_boxes=statics, moving_boxes=movers,
                     pose_noise_trans=pose_noise_trans, pose_noise_yaw_deg=pose_noise_yaw_deg)
    for k, v in overrides.items():
        setattr(spec, k, v)
    return spec.validate()
