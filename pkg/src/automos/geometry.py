"""Rigid transforms and gravity-aligned oriented boxes.

Boxes are yaw-only: the xy footprint is an arbitrary rectangle, the z extent is
an axis-aligned interval. Yaw is kept in (-pi/2, pi/2] with ``l >= w`` so that a
physical rectangle has exactly one representation (squares use (-pi/4, pi/4]).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ValidationError

MIN_EXTENT = 0.01
HALF_PI = 0.5 * math.pi


def check_finite(points: np.ndarray, what: str = "point") -> None:
    bad = ~np.isfinite(points).all(axis=1)
    if bad.any():
        idx = int(np.flatnonzero(bad)[0])
        raise ValidationError(f"non-finite {what} at index {idx}: {points[idx].tolist()}")


def check_transform(T: np.ndarray, tol: float = 1e-6) -> np.ndarray:
    T = np.asarray(T, dtype=np.float64)
    if T.shape != (4, 4):
        raise ValidationError(f"transform must be 4x4, got {T.shape}")
    if not np.isfinite(T).all():
        raise ValidationError("transform has non-finite entries")
    if not np.allclose(T[3], (0.0, 0.0, 0.0, 1.0), atol=1e-12):
        raise ValidationError(f"transform last row must be (0,0,0,1), got {T[3].tolist()}")
    R = T[:3, :3]
    if not np.allclose(R.T @ R, np.eye(3), atol=tol) or abs(np.linalg.det(R) - 1.0) > tol:
        raise ValidationError("transform rotation block is not a proper rotation")
    return T


def make_transform(yaw: float = 0.0, translation=(0.0, 0.0, 0.0)) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    T = np.eye(4)
    T[:2, :2] = [[c, -s], [s, c]]
    T[:3, 3] = translation
    return T


def invert_transform(T: np.ndarray) -> np.ndarray:
    R = T[:3, :3]
    out = np.eye(4)
    out[:3, :3] = R.T
    out[:3, 3] = -R.T @ T[:3, 3]
    return out


def transform_yaw(T: np.ndarray) -> float:
    """Heading of the transform's x axis projected on the ground plane."""
    return math.atan2(T[1, 0], T[0, 0])


def transform_points(points: np.ndarray, T: np.ndarray) -> np.ndarray:
    """Apply ``T`` to the xyz columns of an (N, >=3) array.

    Extra columns (intensity) are carried through untouched and the row order
    is preserved. Non-finite rows are rejected with their index.
    """
    points = np.asarray(points)
    check_finite(points)
    T = check_transform(T)
    out = np.array(points, dtype=np.result_type(points.dtype, np.float32), copy=True)
    xyz = points[:, :3].astype(np.float64) @ T[:3, :3].T + T[:3, 3]
    out[:, :3] = xyz
    return out


def wrap_angle(a: float) -> float:
    """Wrap to (-pi, pi]."""
    a = math.fmod(a + math.pi, 2.0 * math.pi)
    if a <= 0.0:
        a += 2.0 * math.pi
    return a - math.pi


@dataclass
class BoundingBox:
    center: np.ndarray
    yaw: float
    l: float
    w: float
    h: float
    score: float = 1.0
    degenerate: bool = field(default=False, compare=False)

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64).reshape(3)

    @property
    def max_side(self) -> float:
        return max(self.l, self.w, self.h)

    def corners_xy(self) -> np.ndarray:
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        hl, hw = 0.5 * self.l, 0.5 * self.w
        local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
        R = np.array([[c, -s], [s, c]])
        return local @ R.T + self.center[:2]

    def as_array(self) -> np.ndarray:
        return np.array([*self.center, self.l, self.w, self.h, self.yaw])

    def transformed(self, T: np.ndarray) -> "BoundingBox":
        """Re-express the box in another frame; only the yaw part of the rotation
        is applied to the heading (boxes stay gravity aligned)."""
        center = T[:3, :3] @ self.center + T[:3, 3]
        return canonical_box(center, self.yaw + transform_yaw(T), self.l, self.w, self.h,
                             self.score, self.degenerate)


def canonical_box(center, yaw, l, w, h, score=1.0, degenerate=False) -> BoundingBox:
    """Swap extents / shift yaw until ``l >= w`` and yaw lies in the canonical branch."""
    l, w, h = max(float(l), MIN_EXTENT), max(float(w), MIN_EXTENT), max(float(h), MIN_EXTENT)
    if w > l:
        l, w = w, l
        yaw += HALF_PI
    yaw = math.fmod(yaw, math.pi)
    if math.isclose(l, w, rel_tol=0.0, abs_tol=1e-9):
        # square footprint: 4-fold symmetric, fold into (-pi/4, pi/4]
        yaw = math.fmod(yaw, HALF_PI)
        if yaw > 0.5 * HALF_PI:
            yaw -= HALF_PI
        elif yaw <= -0.5 * HALF_PI:
            yaw += HALF_PI
    else:
        if yaw > HALF_PI:
            yaw -= math.pi
        elif yaw <= -HALF_PI:
            yaw += math.pi
    return BoundingBox(np.asarray(center, dtype=np.float64), yaw, l, w, h, score, degenerate)


def convex_hull_2d(xy: np.ndarray) -> np.ndarray:
    """Andrew's monotone chain; returns hull vertices counter-clockwise, no repeats."""
    pts = np.unique(np.asarray(xy, dtype=np.float64), axis=0)
    if len(pts) <= 2:
        return pts
    pts = pts.tolist()

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower, upper = [], []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1])


def _min_area_rect(hull: np.ndarray):
    """Rotating calipers over hull edges: returns (yaw, center_xy, extent_a, extent_b)."""
    edges = np.roll(hull, -1, axis=0) - hull
    angles = np.arctan2(edges[:, 1], edges[:, 0]) % HALF_PI
    angles = np.unique(angles)
    c, s = np.cos(angles), np.sin(angles)
    # hull expressed in each candidate frame rotated by -angle
    u = hull[:, 0][None, :] * c[:, None] + hull[:, 1][None, :] * s[:, None]
    v = -hull[:, 0][None, :] * s[:, None] + hull[:, 1][None, :] * c[:, None]
    umin, umax = u.min(axis=1), u.max(axis=1)
    vmin, vmax = v.min(axis=1), v.max(axis=1)
    area = (umax - umin) * (vmax - vmin)
    k = int(np.argmin(area))
    uc, vc = 0.5 * (umin[k] + umax[k]), 0.5 * (vmin[k] + vmax[k])
    center = np.array([uc * c[k] - vc * s[k], uc * s[k] + vc * c[k]])
    return float(angles[k]), center, float(umax[k] - umin[k]), float(vmax[k] - vmin[k])


def fit_bounding_box(points: np.ndarray) -> BoundingBox:
    """Minimum-area footprint rectangle over the xy hull, extruded over [zmin, zmax].

    One or two distinct xy points, or a collinear set, fall back to an
    axis-aligned box flagged ``degenerate``. Extents are clamped to >= 1 cm.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or len(points) < 1:
        raise ValidationError("cannot fit a box to an empty point set")
    check_finite(points[:, :3])
    xyz = points[:, :3]
    zmin, zmax = xyz[:, 2].min(), xyz[:, 2].max()
    score = min(1.0, len(xyz) / 100.0)
    hull = convex_hull_2d(xyz[:, :2])
    if len(hull) < 3:
        lo, hi = xyz[:, :2].min(axis=0), xyz[:, :2].max(axis=0)
        center = np.array([*(0.5 * (lo + hi)), 0.5 * (zmin + zmax)])
        ext = hi - lo
        return canonical_box(center, 0.0, ext[0], ext[1], zmax - zmin, score, degenerate=True)
    yaw, cxy, ea, eb = _min_area_rect(hull)
    center = np.array([cxy[0], cxy[1], 0.5 * (zmin + zmax)])
    return canonical_box(center, yaw, ea, eb, zmax - zmin, score)


def box_volume(b: BoundingBox) -> float:
    return b.l * b.w * b.h


def points_in_box(points: np.ndarray, b: BoundingBox, margin: float = 1e-6) -> np.ndarray:
    xyz = np.asarray(points)[:, :3] - b.center
    c, s = math.cos(b.yaw), math.sin(b.yaw)
    u = xyz[:, 0] * c + xyz[:, 1] * s
    v = -xyz[:, 0] * s + xyz[:, 1] * c
    return ((np.abs(u) <= 0.5 * b.l + margin)
            & (np.abs(v) <= 0.5 * b.w + margin)
            & (np.abs(xyz[:, 2]) <= 0.5 * b.h + margin))


def _clip(subject: list, a, b) -> list:
    """Keep the part of ``subject`` left of the directed edge a->b."""
    out = []
    if not subject:
        return out

    def side(p):
        return (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])

    prev = subject[-1]
    sp = side(prev)
    for cur in subject:
        sc = side(cur)
        if sc >= 0:
            if sp < 0:
                t = sp / (sp - sc)
                out.append((prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])))
            out.append(cur)
        elif sp >= 0:
            t = sp / (sp - sc)
            out.append((prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])))
        prev, sp = cur, sc
    return out


def polygon_area(poly) -> float:
    if len(poly) < 3:
        return 0.0
    p = np.asarray(poly)
    x, y = p[:, 0], p[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def footprint_intersection(a: BoundingBox, b: BoundingBox) -> float:
    poly = [tuple(p) for p in a.corners_xy()]
    clip = b.corners_xy()
    for i in range(4):
        poly = _clip(poly, clip[i], clip[(i + 1) % 4])
        if not poly:
            return 0.0
    return polygon_area(poly)


def box_iou(a: BoundingBox, b: BoundingBox) -> float:
    """Volume IoU of two yaw-rotated boxes (exact footprint clipping x z overlap)."""
    zo = min(a.center[2] + 0.5 * a.h, b.center[2] + 0.5 * b.h) - max(a.center[2] - 0.5 * a.h,
                                                                      b.center[2] - 0.5 * b.h)
    if zo <= 0.0:
        return 0.0
    # cheap reject on circumscribed circles
    ra = 0.5 * math.hypot(a.l, a.w)
    rb = 0.5 * math.hypot(b.l, b.w)
    if np.hypot(*(a.center[:2] - b.center[:2])) > ra + rb:
        return 0.0
    inter = footprint_intersection(a, b) * zo
    union = box_volume(a) + box_volume(b) - inter
    if union <= 0.0:
        return 0.0
    return float(min(1.0, max(0.0, inter / union)))


def with_center(b: BoundingBox, center) -> BoundingBox:
    return replace(b, center=np.asarray(center, dtype=np.float64))
