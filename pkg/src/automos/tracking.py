"""Constant-velocity box tracking in the world frame.

State: [x, y, z, vx, vy, vz, l, w, h, yaw]; measurement: [x, y, z, l, w, h, yaw].
The motion and measurement models are linear, so a plain Kalman filter is
enough. Association cost is a weighted sum of center distance, 1 - IoU and
relative volume change; a gated-out match starts a new track instead.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .assignment import hungarian_assign
from .geometry import BoundingBox, box_iou, box_volume, canonical_box

STATE_DIM = 10
MEAS_DIM = 7
_H = np.zeros((MEAS_DIM, STATE_DIM))
_H[[0, 1, 2, 3, 4, 5, 6], [0, 1, 2, 6, 7, 8, 9]] = 1.0


@dataclass
class NoiseModel:
    q_pos: float = 0.01
    q_vel: float = 0.25
    q_shape: float = 0.01
    r_pos: float = 0.04
    r_shape: float = 0.04
    r_yaw: float = 0.01
    init_vel_var: float = 4.0

    @property
    def Q(self) -> np.ndarray:
        return np.diag([self.q_pos] * 3 + [self.q_vel] * 3 + [self.q_shape] * 4)

    @property
    def R(self) -> np.ndarray:
        return np.diag([self.r_pos] * 3 + [self.r_shape] * 3 + [self.r_yaw])


def box_measurement(b: BoundingBox) -> np.ndarray:
    return np.array([*b.center, b.l, b.w, b.h, b.yaw])


@dataclass
class TrackState:
    mean: np.ndarray
    cov: np.ndarray

    @classmethod
    def from_box(cls, b: BoundingBox, noise: NoiseModel) -> "TrackState":
        x = np.zeros(STATE_DIM)
        x[[0, 1, 2, 6, 7, 8, 9]] = box_measurement(b)
        P = np.zeros((STATE_DIM, STATE_DIM))
        P[np.ix_([0, 1, 2, 6, 7, 8, 9], [0, 1, 2, 6, 7, 8, 9])] = noise.R
        P[3:6, 3:6] = np.eye(3) * noise.init_vel_var
        return cls(x, P)

    @property
    def center(self) -> np.ndarray:
        return self.mean[:3]

    @property
    def velocity(self) -> np.ndarray:
        return self.mean[3:6]

    def box(self) -> BoundingBox:
        x = self.mean
        return canonical_box(x[:3], x[9], abs(x[6]), abs(x[7]), abs(x[8]))


def transition(dt: float) -> np.ndarray:
    F = np.eye(STATE_DIM)
    F[0, 3] = F[1, 4] = F[2, 5] = dt
    return F


def predict(state: TrackState, dt: float, Q: np.ndarray) -> TrackState:
    F = transition(dt)
    P = F @ state.cov @ F.T + Q
    return TrackState(F @ state.mean, 0.5 * (P + P.T))


def update(state: TrackState, z: np.ndarray, R: np.ndarray) -> TrackState:
    """Kalman update with the yaw measurement moved onto the predicted branch."""
    z = np.array(z, dtype=np.float64)
    pred_yaw = state.mean[9]
    z[6] = pred_yaw + (z[6] - pred_yaw + 0.5 * math.pi) % math.pi - 0.5 * math.pi
    P = state.cov
    S = _H @ P @ _H.T + R
    K = P @ _H.T @ np.linalg.pinv(S, hermitian=True)
    x = state.mean + K @ (z - _H @ state.mean)
    A = np.eye(STATE_DIM) - K @ _H
    P = A @ P @ A.T + K @ R @ K.T  # Joseph form keeps P symmetric PSD
    return TrackState(x, 0.5 * (P + P.T))


@dataclass
class Detection:
    """An instance handed to the tracker: world-frame box plus bookkeeping."""

    box: BoundingBox
    scan: int
    index: int  # position in that scan's instance list


@dataclass
class HistoryEntry:
    scan: int
    center: np.ndarray  # filtered world-frame center
    box: BoundingBox  # measured world-frame box
    instance: int


@dataclass
class Track:
    id: int
    state: TrackState
    status: str = "active"
    frames_since_seen: int = 0
    history: list = field(default_factory=list)


def cost_components(det: BoundingBox, pred: BoundingBox) -> tuple[float, float, float]:
    c_d = float(np.linalg.norm(det.center - pred.center))
    c_o = 1.0 - box_iou(det, pred)
    va, vb = box_volume(det), box_volume(pred)
    c_v = 1.0 - min(va, vb) / max(va, vb)
    return c_d, c_o, c_v


def build_cost_matrix(dets, preds, alpha=(1.0, 1.0, 1.0)):
    """Returns (C, components) with C[i, j] = alpha . (c_d, c_o, c_v)(det i, pred j)."""
    if min(alpha) < 0:
        raise ValueError("association weights must be nonnegative")
    comps = np.zeros((len(dets), len(preds), 3))
    for i, d in enumerate(dets):
        for j, p in enumerate(preds):
            comps[i, j] = cost_components(d, p)
    return comps @ np.asarray(alpha, dtype=np.float64), comps


def flag_add(components, thresholds) -> bool:
    c_d, c_o, c_v = components
    t_d, t_o, t_v = thresholds
    return bool(c_d > t_d or c_o > t_o or c_v > t_v)


def ego_compensate(boxes, pose: np.ndarray) -> list[BoundingBox]:
    return [b.transformed(pose) for b in boxes]


class Tracker:
    """Multi-object tracker; feed one scan at a time with :meth:`step`."""

    def __init__(self, alpha=(1.0, 1.0, 1.0), thresholds=(2.0, 0.95, 0.7), n_old: int = 5,
                 dt: float = 0.1, noise: NoiseModel | None = None):
        self.alpha = tuple(alpha)
        self.thresholds = tuple(thresholds)
        self.n_old = n_old
        self.dt = dt
        self.noise = noise or NoiseModel()
        self._Q = self.noise.Q
        self._R = self.noise.R
        self.live: list[Track] = []
        self.finished: list[Track] = []
        self._next_id = 0
        self._last_scan: int | None = None

    def _spawn(self, det: Detection) -> Track:
        st = TrackState.from_box(det.box, self.noise)
        tr = Track(self._next_id, st)
        tr.history.append(HistoryEntry(det.scan, st.center.copy(), det.box, det.index))
        self._next_id += 1
        return tr

    def step(self, scan: int, detections: list[Detection]) -> dict:
        """Process one scan. Returns ``{instance index: track id}`` for this scan."""
        if self._last_scan is not None:
            steps = scan - self._last_scan
            if steps <= 0:
                raise ValueError("scans must be fed in increasing order")
            for tr in self.live:
                for _ in range(steps):
                    tr.state = predict(tr.state, self.dt, self._Q)
        self._last_scan = scan

        preds = [tr.state.box() for tr in self.live]
        C, comps = build_cost_matrix([d.box for d in detections], preds, self.alpha)
        pairs, unmatched_dets, _ = hungarian_assign(C)

        seen = set()
        assigned = {}
        spawn = list(unmatched_dets)
        for i, j in pairs:
            if flag_add(comps[i, j], self.thresholds):
                spawn.append(i)
                continue
            tr = self.live[j]
            det = detections[i]
            tr.state = update(tr.state, box_measurement(det.box), self._R)
            tr.history.append(HistoryEntry(scan, tr.state.center.copy(), det.box, det.index))
            tr.frames_since_seen = 0
            tr.status = "active"
            seen.add(j)
            assigned[det.index] = tr.id

        kept = []
        for j, tr in enumerate(self.live):
            if j not in seen:
                tr.frames_since_seen += 1
                tr.status = "deactivated"
                if tr.frames_since_seen > self.n_old:
                    self.finished.append(tr)
                    continue
            kept.append(tr)
        self.live = kept

        for i in sorted(spawn):
            tr = self._spawn(detections[i])
            self.live.append(tr)
            assigned[detections[i].index] = tr.id
        return assigned

    def finalize(self) -> list[Track]:
        """Close all live tracks; returns every track ever created, ordered by id."""
        self.finished.extend(self.live)
        self.live = []
        return sorted(self.finished, key=lambda t: t.id)
