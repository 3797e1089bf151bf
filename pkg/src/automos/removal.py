"""Coarse dynamic-point proposals from an aggregated map.

Every scan is moved to the world frame and stacked into one map. Each scan is
then used as a query: around its sensor origin the plane is cut into
ring/sector cells, and the pseudo-occupancy (max z - min z) of the query and
of the map are compared per cell. Where the map saw a much taller column than
the query, whatever the map holds in that cell was not there at query time,
and those map points become dynamic proposals for the scans they came from.
Ground points inside flagged cells are released again by a per-cell RANSAC
plane fit.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import ValidationError
from .geometry import transform_points

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class VolumeGrid:
    max_radius: float = 80.0
    n_rings: int = 20
    n_sectors: int = 60

    @property
    def n_cells(self) -> int:
        return self.n_rings * self.n_sectors

    def cell_index(self, xy: np.ndarray, origin=(0.0, 0.0)) -> np.ndarray:
        """Flat ring*n_sectors+sector index per point; -1 outside the VOI."""
        xy = np.ascontiguousarray(xy[:, :2], dtype=np.float64)
        return _polar_cells(xy, float(origin[0]), float(origin[1]), float(self.max_radius),
                            self.n_rings, self.n_sectors)

    def neighbours(self, cell: int):
        ring, sector = divmod(cell, self.n_sectors)
        for dr in (-1, 0, 1):
            r = ring + dr
            if not 0 <= r < self.n_rings:
                continue
            for ds in (-1, 0, 1):
                if dr == 0 and ds == 0:
                    continue
                yield r * self.n_sectors + (sector + ds) % self.n_sectors


@njit(cache=True)
def _polar_cells(xy, ox, oy, max_radius, n_rings, n_sectors):
    out = np.empty(xy.shape[0], dtype=np.int64)
    ring_scale = n_rings / max_radius
    sector_scale = n_sectors / (2 * np.pi)
    for i in range(xy.shape[0]):
        dx = xy[i, 0] - ox
        dy = xy[i, 1] - oy
        r = np.hypot(dx, dy)
        if r >= max_radius:
            out[i] = -1
            continue
        sector = min(int((np.arctan2(dy, dx) + np.pi) * sector_scale), n_sectors - 1)
        out[i] = int(r * ring_scale) * n_sectors + sector
    return out


@njit(cache=True)
def _cell_minmax(cells, zmin, zmax, n_cells):
    lo = np.full(n_cells, np.inf)
    hi = np.full(n_cells, -np.inf)
    count = np.zeros(n_cells, dtype=np.int64)
    for i in range(cells.shape[0]):
        c = cells[i]
        if c < 0:
            continue
        count[c] += 1
        if zmin[i] < lo[c]:
            lo[c] = zmin[i]
        if zmax[i] > hi[c]:
            hi[c] = zmax[i]
    return lo, hi, count


def pseudo_occupancy(z) -> float:
    z = np.asarray(z)
    if z.size == 0:
        return 0.0
    return float(z.max() - z.min())


def cell_occupancy(cells: np.ndarray, zmin: np.ndarray, zmax: np.ndarray, n_cells: int):
    """Per-cell (occupancy, count) from per-point z ranges; cells < 0 are ignored."""
    lo, hi, count = _cell_minmax(np.asarray(cells, dtype=np.int64),
                                 np.asarray(zmin, dtype=np.float64),
                                 np.asarray(zmax, dtype=np.float64), n_cells)
    occ = np.where(count > 0, hi - lo, 0.0)
    return occ, count


@dataclass
class PointMap:
    """All scans in the world frame with per-point provenance.

    ``voxel_of`` maps each label-bearing point to a cell of the thinned copy
    (``voxel_xy``, ``voxel_zmin``, ``voxel_zmax``) that the ratio test runs on.
    """

    xyz: np.ndarray
    scan_index: np.ndarray
    point_index: np.ndarray
    offsets: np.ndarray
    voxel_of: np.ndarray
    voxel_xy: np.ndarray
    voxel_zmin: np.ndarray
    voxel_zmax: np.ndarray

    def __len__(self):
        return len(self.xyz)

    @property
    def n_voxels(self) -> int:
        return len(self.voxel_xy)

    def scan_slice(self, t: int) -> slice:
        return slice(int(self.offsets[t]), int(self.offsets[t + 1]))

    def lookup(self, k: int) -> tuple[int, int]:
        return int(self.scan_index[k]), int(self.point_index[k])


def voxel_keys(xyz: np.ndarray, voxel_size: float) -> np.ndarray:
    q = np.floor(xyz / voxel_size).astype(np.int64)
    q -= q.min(axis=0)
    span = q.max(axis=0) + 1
    return (q[:, 0] * span[1] + q[:, 1]) * span[2] + q[:, 2]


def aggregate_map(scans, poses, voxel_size: float | None = 0.1) -> PointMap:
    if len(scans) != len(poses):
        raise ValidationError(f"{len(scans)} scans but {len(poses)} poses")
    if not scans:
        raise ValidationError("no scans to aggregate")
    parts = [transform_points(np.asarray(s.points)[:, :3].astype(np.float64), T)
             for s, T in zip(scans, poses)]
    sizes = np.array([len(p) for p in parts])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    xyz = np.concatenate(parts)
    scan_index = np.repeat(np.arange(len(parts)), sizes)
    point_index = np.concatenate([np.arange(n) for n in sizes])

    if voxel_size:
        _, voxel_of = np.unique(voxel_keys(xyz, voxel_size), return_inverse=True)
        voxel_of = voxel_of.ravel()
    else:
        voxel_of = np.arange(len(xyz))
    nv = int(voxel_of.max()) + 1
    cnt = np.bincount(voxel_of, minlength=nv)
    vxy = np.stack([np.bincount(voxel_of, xyz[:, i], nv) / cnt for i in (0, 1)], axis=1)
    zmin = np.full(nv, np.inf)
    zmax = np.full(nv, -np.inf)
    np.minimum.at(zmin, voxel_of, xyz[:, 2])
    np.maximum.at(zmax, voxel_of, xyz[:, 2])
    return PointMap(xyz, scan_index, point_index, offsets, voxel_of, vxy, zmin, zmax)


def ratio_test_cells(q_occ, q_cnt, m_occ, m_cnt, ratio: float, h_min: float):
    """Per-cell dynamic decision in both directions.

    Cells without query points are unobserved at query time and never flagged.
    Returns (map_taller, query_taller) boolean arrays.
    """
    observed = (q_cnt > 0) & (m_cnt > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        map_taller = observed & (m_occ > h_min) & (q_occ < ratio * m_occ)
        query_taller = observed & (q_occ > h_min) & (m_occ < ratio * q_occ)
    return map_taller, query_taller


def scan_ratio_test(query_xyz: np.ndarray, origin, map_xy: np.ndarray, map_zmin: np.ndarray,
                    map_zmax: np.ndarray, grid: VolumeGrid, ratio: float = 0.2,
                    h_min: float = 0.2, return_observed: bool = False):
    """Compare one world-frame query scan against the map around ``origin``.

    Returns ``(map_flags, query_flags)``: map entries lying in cells where the
    map column is taller than the query's, and query points lying in cells
    where the query column is taller than the map's. With ``return_observed``
    a third mask marks map entries whose cell the query observed at all.
    """
    n = grid.n_cells
    q_cells = grid.cell_index(query_xyz[:, :2], origin)
    q_occ, q_cnt = cell_occupancy(q_cells, query_xyz[:, 2], query_xyz[:, 2], n)
    m_cells = grid.cell_index(map_xy, origin)
    m_occ, m_cnt = cell_occupancy(m_cells, map_zmin, map_zmax, n)
    map_taller, query_taller = ratio_test_cells(q_occ, q_cnt, m_occ, m_cnt, ratio, h_min)
    # a trailing False makes cell index -1 (outside the VOI) map to False
    map_flags = np.append(map_taller, False)[m_cells]
    query_flags = np.append(query_taller, False)[q_cells]
    if return_observed:
        return map_flags, query_flags, np.append(q_cnt > 0, False)[m_cells]
    return map_flags, query_flags


@njit(cache=True)
def _best_hypothesis(pts, samples, threshold):
    """Plane through the sampled triple with the most points within ``threshold``."""
    best = -1
    bn = np.zeros(3)
    bd = 0.0
    for it in range(samples.shape[0]):
        a = pts[samples[it, 0]]
        u = pts[samples[it, 1]] - a
        v = pts[samples[it, 2]] - a
        n = np.array([u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2],
                      u[0] * v[1] - u[1] * v[0]])
        norm = np.sqrt(n[0] * n[0] + n[1] * n[1] + n[2] * n[2])
        if norm <= 1e-9:
            continue
        n = n / norm
        d = -(n[0] * a[0] + n[1] * a[1] + n[2] * a[2])
        cnt = 0
        for i in range(pts.shape[0]):
            if abs(pts[i, 0] * n[0] + pts[i, 1] * n[1] + pts[i, 2] * n[2] + d) <= threshold:
                cnt += 1
        if cnt > best:
            best = cnt
            bn = n
            bd = d
    return bn, bd, best


def _lsq_plane(pts: np.ndarray):
    """Least-squares plane through ``pts``; normal points up."""
    centroid = pts.mean(axis=0)
    q = pts - centroid
    _, vecs = np.linalg.eigh(q.T @ q)
    n = vecs[:, 0]
    if n[2] < 0:
        n = -n
    return n, -float(n @ centroid)


def _ransac_plane(pts: np.ndarray, rng: np.random.Generator, threshold: float, iters: int):
    """Best plane (unit normal n, offset d with n.p + d = 0) and its inlier mask."""
    samples = rng.integers(0, len(pts), size=(iters, 3))
    n, d, count = _best_hypothesis(pts, samples, threshold)
    if count < 0:
        return None, None
    inliers = np.abs(pts @ n + d) <= threshold
    # least-squares refinement on the consensus set
    return _lsq_plane(pts[inliers]), inliers


def fit_ground_plane(pts: np.ndarray, rng: np.random.Generator, d_ground: float,
                     max_tilt_deg: float = 30.0, iters: int = 30, min_inlier_frac: float = 0.5):
    """RANSAC a ground plane seeded by the lowest-z quartile of ``pts``.

    Seeds are the lowest quarter of the points (at least three), minus those
    more than ``d_ground`` above the mean of the ten lowest points. The
    consensus plane is refit on every point within ``d_ground / 2`` of it.
    Returns ``(normal, offset)`` with the normal pointing up, or None when
    there are fewer than 3 points, the seeds are not planar enough, the plane
    tilts beyond ``max_tilt_deg``, or too many points lie clearly below it
    (then it is the underside of an object, not ground).
    """
    n = len(pts)
    if n < 3:
        return None
    k = max(3, -(-n // 4))
    z = pts[:, 2]
    order = np.argsort(z, kind="stable")
    # trim the quartile to a band above the lowest points, dropping object undersides
    lowest = z[order[:min(n, 10)]].mean()
    seeds = pts[order[:k]]
    seeds = np.ascontiguousarray(seeds[seeds[:, 2] <= lowest + d_ground])
    if len(seeds) < 3:
        return None
    plane, inliers = _ransac_plane(seeds, rng, 0.5 * d_ground, iters)
    if plane is None or inliers.mean() < min_inlier_frac:
        return None
    normal, d = plane
    near = pts[np.abs(pts @ normal + d) <= 0.5 * d_ground]
    if len(near) >= 3:
        normal, d = _lsq_plane(near)
    if normal[2] < np.cos(np.radians(max_tilt_deg)):
        return None
    below = np.count_nonzero(pts @ normal + d < -d_ground)
    if below > max(3, 0.02 * n):
        return None
    return normal, d


def revert_ground(flags: np.ndarray, xyz: np.ndarray, grid: VolumeGrid, d_ground: float = 0.15,
                  seed: int = 0, max_tilt_deg: float = 30.0) -> np.ndarray:
    """Un-flag ground points inside flagged cells of one scan (sensor frame).

    Each flagged cell gets a plane fitted on the points of its 3x3 cell
    neighbourhood, falling back to the cell alone. A point is ground when it
    lies below that plane or at most ``d_ground`` above it. Flags are only
    ever cleared.
    """
    flags = np.asarray(flags, dtype=bool)
    out = flags.copy()
    if not flags.any():
        return out
    cells = grid.cell_index(xyz[:, :2])
    dyn = np.unique(cells[flags & (cells >= 0)])
    if len(dyn) == 0:
        return out
    order = np.argsort(cells, kind="stable")
    bounds = np.searchsorted(cells[order], np.arange(grid.n_cells + 1), side="left")

    def members(c):
        return order[bounds[c]:bounds[c + 1]]

    rng = np.random.default_rng(seed)
    for c in dyn.tolist():
        idx = members(c)
        pooled = np.concatenate([idx] + [members(nb) for nb in grid.neighbours(c)])
        plane = fit_ground_plane(xyz[pooled], rng, d_ground, max_tilt_deg)
        if plane is None:
            plane = fit_ground_plane(xyz[idx], rng, d_ground, max_tilt_deg)
        if plane is None:
            continue
        n, d = plane
        ground = xyz[idx] @ n + d <= d_ground
        out[idx[ground]] = False
    return out


def compute_proposals(scans, poses, grid: VolumeGrid | None = None, ratio: float = 0.2,
                      h_min: float = 0.2, d_ground: float = 0.15, voxel_size: float = 0.1,
                      min_votes: int = 1, min_vote_ratio: float = 0.2,
                      ground_reversion: bool = True, map_=None, executor=None) -> list[np.ndarray]:
    """Per-scan boolean dynamic proposals for a whole sequence.

    A map voxel is proposed when at least ``min_votes`` queries, and at least
    ``min_vote_ratio`` of the queries that observed its cell, found it in a
    dynamic cell. Proposals are handed to every scan point inside the voxel.
    """
    grid = grid or VolumeGrid()
    pmap = map_ if map_ is not None else aggregate_map(scans, poses, voxel_size)
    votes = np.zeros(pmap.n_voxels, dtype=np.int32)
    observed = np.zeros(pmap.n_voxels, dtype=np.int32)
    query_hits = [None] * len(scans)
    for t, T in enumerate(poses):
        q = pmap.xyz[pmap.scan_slice(t)]
        mflags, qflags, mobs = scan_ratio_test(q, T[:2, 3], pmap.voxel_xy, pmap.voxel_zmin,
                                               pmap.voxel_zmax, grid, ratio, h_min,
                                               return_observed=True)
        votes += mflags
        observed += mobs
        query_hits[t] = qflags
    dynamic_voxel = (votes >= min_votes) & (votes >= min_vote_ratio * observed)

    def finish(t):
        sl = pmap.scan_slice(t)
        flags = dynamic_voxel[pmap.voxel_of[sl]] | query_hits[t]
        if ground_reversion:
            flags = revert_ground(flags, np.asarray(scans[t].points)[:, :3].astype(np.float64),
                                  grid, d_ground, seed=t)
        return flags

    if executor is not None:
        return list(executor.map(finish, range(len(scans))))
    return [finish(t) for t in range(len(scans))]
