"""KITTI-style scan, pose, calibration and SemanticKITTI-style label files."""
from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, ValidationError
from .geometry import check_finite, check_transform, invert_transform, transform_points

STATIC_LABEL = 9
MOVING_LABEL = 251


@dataclass
class Scan:
    """One sweep: (N, 4) float32 rows of x, y, z, intensity in on-disk order."""

    points: np.ndarray
    index: int = 0

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float32)
        if self.points.ndim != 2 or self.points.shape[1] != 4:
            raise ValidationError(f"scan points must be (N, 4), got {self.points.shape}")
        if len(self.points) < 1:
            raise ValidationError("scan has no points")
        if self.index < 0:
            raise ValidationError("scan index must be nonnegative")
        check_finite(self.points)

    def __len__(self):
        return len(self.points)

    @property
    def xyz(self) -> np.ndarray:
        return self.points[:, :3]

    def transformed(self, pose: np.ndarray) -> "Scan":
        return Scan(transform_points(self.points, pose).astype(np.float32), self.index)


def scan_path(directory, index: int) -> Path:
    return Path(directory) / f"{index:06d}.bin"


def label_path(directory, index: int) -> Path:
    return Path(directory) / f"{index:06d}.label"


def read_scan(path, index: int | None = None) -> Scan:
    path = Path(path)
    size = os.path.getsize(path)
    if size == 0:
        raise FormatError(f"{path}: empty scan file")
    if size % 16:
        raise FormatError(f"{path}: size {size} is not a multiple of 16 bytes")
    pts = np.fromfile(path, dtype="<f4").reshape(-1, 4)
    if index is None:
        try:
            index = int(path.stem)
        except ValueError:
            index = 0
    return Scan(pts, index)


def write_scan(scan: Scan, path) -> None:
    np.ascontiguousarray(scan.points, dtype="<f4").tofile(path)


def list_scans(directory) -> list[Path]:
    return sorted(Path(directory).glob("*.bin"))


def _parse_3x4(values, where: str) -> np.ndarray:
    if len(values) != 12:
        raise FormatError(f"{where}: expected 12 values, got {len(values)}")
    try:
        m = np.array([float(v) for v in values]).reshape(3, 4)
    except ValueError as e:
        raise FormatError(f"{where}: {e}") from None
    T = np.eye(4)
    T[:3] = m
    return T


def read_calib(path) -> np.ndarray:
    """Return the velodyne-to-camera ``Tr`` transform from a KITTI calib.txt."""
    with open(path) as f:
        for n, line in enumerate(f, 1):
            if line.startswith("Tr:"):
                T = _parse_3x4(line.split()[1:], f"{path}:{n}")
                # KITTI Tr is stored to ~1e-8 precision; re-orthonormalise so it
                # passes the rigid-transform check
                u, _, vt = np.linalg.svd(T[:3, :3])
                T[:3, :3] = u @ vt
                return check_transform(T)
    raise FormatError(f"{path}: no 'Tr:' line")


def read_poses(path, calib: np.ndarray | None = None) -> list[np.ndarray]:
    """KITTI odometry poses (row-major 3x4 per line).

    With ``calib`` the camera-frame poses are moved to the LiDAR frame as
    ``Tr^-1 T Tr``.
    """
    poses = []
    Tr_inv = invert_transform(calib) if calib is not None else None
    with open(path) as f:
        for n, line in enumerate(f, 1):
            if not line.strip():
                continue
            T = _parse_3x4(line.split(), f"{path}:{n}")
            if calib is not None:
                T = Tr_inv @ T @ calib
            try:
                poses.append(check_transform(T, tol=1e-5))
            except ValidationError as e:
                raise ValidationError(f"{path}:{n}: {e}") from None
    return poses


def write_poses(poses, path) -> None:
    with open(path, "w") as f:
        for T in poses:
            f.write(" ".join(f"{v:.12e}" for v in np.asarray(T)[:3].ravel()) + "\n")


def write_calib(Tr: np.ndarray, path) -> None:
    with open(path, "w") as f:
        f.write("Tr: " + " ".join(f"{v:.12e}" for v in np.asarray(Tr)[:3].ravel()) + "\n")


def encode_labels(moving: np.ndarray) -> np.ndarray:
    moving = np.asarray(moving, dtype=bool)
    return np.where(moving, MOVING_LABEL, STATIC_LABEL).astype("<u4")


def decode_labels(raw: np.ndarray) -> np.ndarray:
    return (np.asarray(raw, dtype=np.uint32) & 0xFFFF) >= MOVING_LABEL


def write_labels(moving: np.ndarray, path) -> None:
    """Write a boolean moving mask as uint32 SemanticKITTI MOS labels (9 / 251)."""
    encode_labels(moving).tofile(path)


def read_labels(path, n_points: int | None = None) -> np.ndarray:
    """Read labels as a boolean moving mask; lower-16-bit values >= 251 are moving.

    If ``n_points`` is given, a length mismatch is an error, never a truncation.
    """
    size = os.path.getsize(path)
    if size % 4:
        raise FormatError(f"{path}: size {size} is not a multiple of 4 bytes")
    moving = decode_labels(np.fromfile(path, dtype="<u4"))
    if n_points is not None and len(moving) != n_points:
        raise ValidationError(f"{path}: {len(moving)} labels for a scan with {n_points} points")
    return moving


def load_sequence(seq_dir, poses_path=None, calib_path=None):
    """Scans and LiDAR-frame poses of a KITTI-layout sequence directory.

    Expects ``velodyne/*.bin`` and ``poses.txt``; ``calib.txt`` is used when
    present (poses are then converted from the camera to the LiDAR frame).
    """
    seq_dir = Path(seq_dir)
    files = list_scans(seq_dir / "velodyne")
    if not files:
        raise FileNotFoundError(f"no scans found in {seq_dir / 'velodyne'}")
    poses_path = Path(poses_path) if poses_path else seq_dir / "poses.txt"
    if not poses_path.exists():
        raise FileNotFoundError(f"pose file not found: {poses_path}")
    if calib_path is None and (seq_dir / "calib.txt").exists():
        calib_path = seq_dir / "calib.txt"
    calib = read_calib(calib_path) if calib_path else None
    poses = read_poses(poses_path, calib)
    if len(poses) != len(files):
        raise ValidationError(f"{len(files)} scans but {len(poses)} poses in {poses_path}")
    return [read_scan(f) for f in files], poses
