"""Track verdicts (moving vs static) and per-point label painting."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import points_in_box


@dataclass(frozen=True)
class TrackVerdict:
    track_id: int
    moving: bool
    trajectory_length: float
    max_side: float


def trajectory_length(track, mode: str = "path") -> float:
    """Length travelled by the filtered centers.

    ``mode="path"`` sums consecutive segment lengths, ``mode="displacement"``
    is the straight first-to-last distance.
    """
    centers = np.array([h.center for h in track.history])
    if len(centers) < 2:
        return 0.0
    if mode == "displacement":
        return float(np.linalg.norm(centers[-1] - centers[0]))
    if mode != "path":
        raise ValueError(f"unknown trajectory mode {mode!r}")
    return float(np.linalg.norm(np.diff(centers, axis=0), axis=1).sum())


def classify_track(track, mode: str = "path") -> TrackVerdict:
    length = trajectory_length(track, mode)
    max_side = max(h.box.max_side for h in track.history)
    return TrackVerdict(track.id, length > max_side, length, max_side)


def paint_labels(xyz: np.ndarray, boxes, margin: float = 1e-6) -> np.ndarray:
    """Moving mask: points inside any of ``boxes`` (already in the scan's frame)."""
    moving = np.zeros(len(xyz), dtype=bool)
    for b in boxes:
        moving |= points_in_box(xyz, b, margin)
    return moving


def moving_boxes_per_scan(tracks, verdicts, instances_per_scan) -> dict[int, list]:
    """Sensor-frame boxes of moving tracks, grouped by scan index."""
    moving_ids = {v.track_id for v in verdicts if v.moving}
    out: dict[int, list] = {}
    for tr in tracks:
        if tr.id not in moving_ids:
            continue
        for h in tr.history:
            out.setdefault(h.scan, []).append(instances_per_scan[h.scan][h.instance].box)
    return out
