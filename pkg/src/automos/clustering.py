"""Class-agnostic instance extraction from dynamic proposals.

DBSCAN runs on a uniform hash grid with cell size eps, so neighbour search
only visits the 27 surrounding cells; the scan itself is a compiled kernel. Border points go to the cluster of their
nearest core point, which makes the partition independent of input order.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import ValidationError
from .geometry import BoundingBox, fit_bounding_box

NOISE = -1

_OFFSETS = np.array([(i, j, k) for i in (-1, 0, 1) for j in (-1, 0, 1) for k in (-1, 0, 1)])


def _grid(xyz: np.ndarray, eps: float):
    """Sort points into eps-sized cells; returns (order, starts, counts, cell_of, nbr).

    ``nbr[c]`` lists the 27 cells around cell ``c`` (-1 where empty).
    """
    q = np.floor(xyz / eps).astype(np.int64)
    q -= q.min(axis=0) - 1
    span = q.max(axis=0) + 2
    code = (q[:, 0] * span[1] + q[:, 1]) * span[2] + q[:, 2]
    order = np.argsort(code, kind="stable")
    cells, starts, counts = np.unique(code[order], return_index=True, return_counts=True)
    cell_of = np.searchsorted(cells, code)
    shift = (_OFFSETS[:, 0] * span[1] + _OFFSETS[:, 1]) * span[2] + _OFFSETS[:, 2]
    target = cells[:, None] + shift[None, :]
    pos = np.minimum(np.searchsorted(cells, target), len(cells) - 1)
    nbr = np.where(cells[pos] == target, pos, -1)
    return order, starts, counts, cell_of, nbr


@njit(cache=True)
def _find(parent, a):
    while parent[a] != a:
        parent[a] = parent[parent[a]]
        a = parent[a]
    return a


@njit(cache=True)
def _grid_dbscan(xyz, eps, min_pts, order, starts, counts, cell_of, nbr):
    n = xyz.shape[0]
    e2 = eps * eps
    degree = np.zeros(n, dtype=np.int64)
    for a in range(n):
        c = cell_of[a]
        for k in range(27):
            nc = nbr[c, k]
            if nc < 0:
                continue
            for s in range(starts[nc], starts[nc] + counts[nc]):
                b = order[s]
                dx = xyz[a, 0] - xyz[b, 0]
                dy = xyz[a, 1] - xyz[b, 1]
                dz = xyz[a, 2] - xyz[b, 2]
                if dx * dx + dy * dy + dz * dz <= e2:
                    degree[a] += 1
    core = degree >= min_pts

    parent = np.arange(n)
    for a in range(n):
        if not core[a]:
            continue
        c = cell_of[a]
        for k in range(27):
            nc = nbr[c, k]
            if nc < 0:
                continue
            for s in range(starts[nc], starts[nc] + counts[nc]):
                b = order[s]
                if b <= a or not core[b]:
                    continue
                ra = _find(parent, a)
                rb = _find(parent, b)
                if ra == rb:
                    continue
                dx = xyz[a, 0] - xyz[b, 0]
                dy = xyz[a, 1] - xyz[b, 1]
                dz = xyz[a, 2] - xyz[b, 2]
                if dx * dx + dy * dy + dz * dz <= e2:
                    if ra < rb:
                        parent[rb] = ra
                    else:
                        parent[ra] = rb

    labels = np.full(n, -1, dtype=np.int64)
    root_label = np.full(n, -1, dtype=np.int64)
    nxt = 0
    for a in range(n):
        if core[a]:
            r = _find(parent, a)
            if root_label[r] < 0:
                root_label[r] = nxt
                nxt += 1
            labels[a] = root_label[r]

    # border points: nearest core, ties broken by the core's coordinates
    for a in range(n):
        if core[a]:
            continue
        best = -1
        bd = np.inf
        c = cell_of[a]
        for k in range(27):
            nc = nbr[c, k]
            if nc < 0:
                continue
            for s in range(starts[nc], starts[nc] + counts[nc]):
                b = order[s]
                if not core[b]:
                    continue
                dx = xyz[a, 0] - xyz[b, 0]
                dy = xyz[a, 1] - xyz[b, 1]
                dz = xyz[a, 2] - xyz[b, 2]
                d = dx * dx + dy * dy + dz * dz
                if d > e2:
                    continue
                if best < 0 or d < bd or (d == bd and (
                        xyz[b, 0] < xyz[best, 0] or (xyz[b, 0] == xyz[best, 0] and (
                            xyz[b, 1] < xyz[best, 1] or (xyz[b, 1] == xyz[best, 1]
                                                         and xyz[b, 2] < xyz[best, 2]))))):
                    best = b
                    bd = d
        if best >= 0:
            labels[a] = labels[best]
    return labels


def dbscan(xyz: np.ndarray, eps: float, min_pts: int = 5) -> np.ndarray:
    """Cluster label per point (``NOISE`` = -1). ``min_pts`` counts the point itself."""
    if eps <= 0:
        raise ValidationError("eps must be positive")
    if min_pts < 1:
        raise ValidationError("min_pts must be at least 1")
    xyz = np.asarray(xyz, dtype=np.float64)[:, :3]
    if len(xyz) == 0:
        return np.zeros(0, dtype=np.int64)
    xyz = np.ascontiguousarray(xyz)
    return _grid_dbscan(xyz, float(eps), int(min_pts), *_grid(xyz, eps))


def segments_from_labels(labels: np.ndarray, index=None) -> list[np.ndarray]:
    index = np.arange(len(labels)) if index is None else np.asarray(index)
    return [index[labels == c] for c in range(int(labels.max(initial=-1)) + 1)]


def multi_eps_cluster(xyz: np.ndarray, eps_list, min_pts: int = 5,
                      max_size: float = 20.0) -> list[np.ndarray]:
    """Descending-eps DBSCAN: oversized clusters are re-split at the next eps.

    Returns index arrays into ``xyz``. Points that end up as noise at any
    level belong to no segment.
    """
    eps_list = list(eps_list)
    if not eps_list:
        raise ValidationError("empty eps ladder")
    if any(a <= b for a, b in zip(eps_list, eps_list[1:])):
        raise ValidationError(f"eps ladder must be strictly descending, got {eps_list}")
    xyz = np.asarray(xyz, dtype=np.float64)[:, :3]

    def split(idx: np.ndarray, level: int) -> list[np.ndarray]:
        labels = dbscan(xyz[idx], eps_list[level], min_pts)
        out = []
        for seg in segments_from_labels(labels, idx):
            if level + 1 < len(eps_list) and fit_bounding_box(xyz[seg]).max_side > max_size:
                out.extend(split(seg, level + 1))
            else:
                out.append(seg)
        return out

    if len(xyz) == 0:
        return []
    return split(np.arange(len(xyz)), 0)


@dataclass
class Instance:
    """A kept segment: indices into its scan and its sensor-frame box."""

    indices: np.ndarray
    box: BoundingBox

    @property
    def n_points(self) -> int:
        return len(self.indices)


def segments_to_instances(segments, xyz: np.ndarray, n_min: int = 5,
                          t_size: float = 20.0) -> list[Instance]:
    out = []
    for seg in segments:
        if len(seg) < n_min:
            continue
        box = fit_bounding_box(xyz[seg])
        if box.max_side > t_size:
            continue
        out.append(Instance(np.asarray(seg), box))
    return out


def cluster_scan(xyz: np.ndarray, proposal: np.ndarray, eps_list=(2.0, 1.0, 0.5, 0.25),
                 min_pts: int = 5, n_min: int = 5, t_size: float = 20.0) -> list[Instance]:
    """Instances among the proposed points of one scan; indices refer to the full scan."""
    idx = np.flatnonzero(proposal)
    if len(idx) == 0:
        return []
    pts = np.asarray(xyz, dtype=np.float64)[idx, :3]
    segs = multi_eps_cluster(pts, eps_list, min_pts, t_size)
    return segments_to_instances([idx[s] for s in segs], np.asarray(xyz, dtype=np.float64),
                                 n_min, t_size)
