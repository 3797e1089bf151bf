"""The five-stage labeling pipeline: proposals, instances, tracking, verdicts, painting."""
from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .clustering import Instance, cluster_scan
from .config import PipelineConfig
from .errors import ValidationError
from .geometry import BoundingBox, transform_points
from .labeling import classify_track, moving_boxes_per_scan, paint_labels
from .removal import VolumeGrid, compute_proposals, voxel_keys
from .tracking import Detection, NoiseModel, Tracker, ego_compensate

log = logging.getLogger(__name__)


@dataclass
class LabelingResult:
    labels: list
    proposals: list
    instances: list
    tracks: list
    verdicts: list
    timings: dict = field(default_factory=dict)

    def summary(self) -> dict:
        return {
            "scans": len(self.labels),
            "tracks": len(self.tracks),
            "moving_tracks": sum(v.moving for v in self.verdicts),
            "moving_points": int(sum(int(l.sum()) for l in self.labels)),
            "timings_s": {k: round(v, 3) for k, v in self.timings.items()},
        }


@contextmanager
def _timed(timings, name):
    t0 = time.perf_counter()
    yield
    timings[name] = time.perf_counter() - t0


def _save_instances(path, instances):
    rows = []
    for t, insts in enumerate(instances):
        for k, inst in enumerate(insts):
            b = inst.box
            rows.append({"scan": t, "k": k, "box": [*b.center.tolist(), b.l, b.w, b.h, b.yaw, b.score],
                         "indices": inst.indices.tolist()})
    Path(path).write_text(json.dumps({"n_scans": len(instances), "instances": rows}))


def _load_instances(path):
    d = json.loads(Path(path).read_text())
    out = [[] for _ in range(d["n_scans"])]
    for r in d["instances"]:
        x, y, z, l, w, h, yaw, s = r["box"]
        out[r["scan"]].append(Instance(np.array(r["indices"], dtype=np.int64),
                                       BoundingBox(np.array([x, y, z]), yaw, l, w, h, s)))
    return out


def label_sequence(scans, poses, config: PipelineConfig | None = None, threads: int = 1,
                   cache_dir=None) -> LabelingResult:
    """Label every point of ``scans`` as moving (True) or static (False).

    With ``cache_dir`` the proposals and instances are stored there and reused
    on the next run, so later stages can be re-run on their own.
    """
    cfg = (config or PipelineConfig()).validate()
    if len(scans) != len(poses):
        raise ValidationError(f"{len(scans)} scans but {len(poses)} poses")
    if not scans:
        raise ValidationError("empty sequence")
    timings: dict = {}
    cache = Path(cache_dir) if cache_dir else None
    if cache:
        cache.mkdir(parents=True, exist_ok=True)
    pool = ThreadPoolExecutor(threads) if threads > 1 else None
    try:
        with _timed(timings, "proposals"):
            prop_file = cache / "proposals.npz" if cache else None
            if prop_file and prop_file.exists():
                with np.load(prop_file) as z:
                    proposals = [z[f"s{t}"] for t in range(len(scans))]
            else:
                grid = VolumeGrid(cfg.voi_radius, cfg.n_rings, cfg.n_sectors)
                proposals = compute_proposals(scans, poses, grid, cfg.ratio_threshold, cfg.h_min,
                                              cfg.d_ground, cfg.map_voxel, cfg.min_votes,
                                              cfg.min_vote_ratio,
                                              cfg.ground_reversion, executor=pool)
                if prop_file:
                    np.savez_compressed(prop_file, **{f"s{t}": p for t, p in enumerate(proposals)})

        with _timed(timings, "clustering"):
            inst_file = cache / "instances.json" if cache else None
            if inst_file and inst_file.exists():
                instances = _load_instances(inst_file)
            else:
                def work(t):
                    xyz = np.asarray(scans[t].points)[:, :3].astype(np.float64)
                    return cluster_scan(xyz, proposals[t], cfg.eps_ladder, cfg.min_pts,
                                        cfg.n_min, cfg.t_size)
                idx = range(len(scans))
                instances = list(pool.map(work, idx)) if pool else [work(t) for t in idx]
                if inst_file:
                    _save_instances(inst_file, instances)

        with _timed(timings, "tracking"):
            noise = NoiseModel(cfg.q_pos, cfg.q_vel, cfg.q_shape, cfg.r_pos, cfg.r_shape,
                               cfg.r_yaw, cfg.init_vel_var)
            tracker = Tracker((cfg.alpha_d, cfg.alpha_o, cfg.alpha_v), (cfg.t_d, cfg.t_o, cfg.t_v),
                              cfg.n_old, cfg.dt, noise)
            for t, (insts, T) in enumerate(zip(instances, poses)):
                world = ego_compensate([i.box for i in insts], T)
                tracker.step(t, [Detection(b, t, k) for k, b in enumerate(world)])
            tracks = tracker.finalize()

        with _timed(timings, "verdicts"):
            verdicts = [classify_track(tr, cfg.trajectory_mode) for tr in tracks]

        with _timed(timings, "painting"):
            boxes = moving_boxes_per_scan(tracks, verdicts, instances)

            def paint(t):
                xyz = np.asarray(scans[t].points)[:, :3]
                return paint_labels(xyz, boxes.get(t, []))
            idx = range(len(scans))
            labels = list(pool.map(paint, idx)) if pool else [paint(t) for t in idx]
    finally:
        if pool:
            pool.shutdown()
    log.info("labelled %d scans: %d tracks, %d moving", len(scans), len(tracks),
             sum(v.moving for v in verdicts))
    return LabelingResult(labels, proposals, instances, tracks, verdicts, timings)


def clean_map(scans, poses, labels, voxel_size: float = 0.1) -> np.ndarray:
    """World-frame map of the static-labelled points, one centroid per voxel."""
    if not scans:
        raise ValidationError("no scans to aggregate")
    if not (len(scans) == len(poses) == len(labels)):
        raise ValidationError(f"{len(scans)} scans, {len(poses)} poses, {len(labels)} label sets")
    parts = []
    for scan, T, moving in zip(scans, poses, labels):
        xyz = np.asarray(scan.points)[:, :3].astype(np.float64)
        if len(moving) != len(xyz):
            raise ValidationError(f"scan {scan.index}: {len(moving)} labels for {len(xyz)} points")
        parts.append(transform_points(xyz[~np.asarray(moving, dtype=bool)], T))
    pts = np.concatenate(parts)
    if len(pts) == 0:
        return pts.reshape(0, 3)
    _, inv, cnt = np.unique(voxel_keys(pts, voxel_size), return_inverse=True, return_counts=True)
    inv = inv.ravel()
    return np.stack([np.bincount(inv, pts[:, i]) / cnt for i in range(3)], axis=1)
