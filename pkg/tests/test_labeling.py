from types import SimpleNamespace

import numpy as np
import pytest

from automos.clustering import Instance
from automos.geometry import canonical_box
from automos.labeling import (classify_track, moving_boxes_per_scan, paint_labels,
                              trajectory_length)
from automos.tracking import Detection, Tracker


def _track(centers, side=4.5, tid=0):
    box = canonical_box((0, 0, 0), 0.0, side, 1.8, 1.5)
    hist = [SimpleNamespace(center=np.asarray(c, float), box=box, scan=k, instance=0)
            for k, c in enumerate(centers)]
    return SimpleNamespace(id=tid, history=hist)


def test_trajectory_length_examples():
    assert trajectory_length(_track([(1, 2, 3)])) == 0.0
    tr = _track([(0, 0, 0), (1, 0, 0), (1, 1, 0)])
    assert trajectory_length(tr) == pytest.approx(2.0)
    assert trajectory_length(tr, "displacement") == pytest.approx(2 ** 0.5)
    with pytest.raises(ValueError):
        trajectory_length(tr, "bogus")


def test_filtered_constant_velocity_length():
    tracker = Tracker()
    for t in range(10):
        b = canonical_box((0.1 * t, 0, 0.75), 0.0, 4.5, 1.8, 1.5)
        tracker.step(t, [Detection(b, t, 0)])
    (tr,) = tracker.finalize()
    assert trajectory_length(tr) == pytest.approx(0.9, abs=0.05)


def test_classify_rule():
    line = lambda L: _track([(x, 0, 0) for x in np.linspace(0, L, 20)])
    assert classify_track(line(6.0)).moving
    assert not classify_track(line(3.0)).moving
    assert not classify_track(_track([(0, 0, 0)] * 5)).moving
    assert not classify_track(line(4.5)).moving  # strictly greater than the largest side


def test_classify_deterministic():
    tr = _track(np.random.default_rng(0).normal(size=(30, 3)))
    assert classify_track(tr) == classify_track(tr)


def test_paint_labels():
    xyz = np.random.default_rng(1).uniform(-1, 1, (100, 3))
    assert not paint_labels(xyz, []).any()
    assert paint_labels(xyz, [canonical_box((0, 0, 0), 0.3, 4, 4, 4)]).all()
    half = paint_labels(xyz, [canonical_box((0.5, 0, 0), 0.0, 1.0, 2.0, 2.0)])
    np.testing.assert_array_equal(half, xyz[:, 0] >= 0)


def test_moving_boxes_only_from_moving_tracks():
    box_a = canonical_box((0, 0, 0), 0.0, 1, 1, 1)
    box_b = canonical_box((5, 0, 0), 0.0, 1, 1, 1)
    instances = [[Instance(np.arange(3), box_a), Instance(np.arange(3, 6), box_b)]]
    tracks = [SimpleNamespace(id=0, history=[SimpleNamespace(scan=0, instance=0)]),
              SimpleNamespace(id=1, history=[SimpleNamespace(scan=0, instance=1)])]
    verdicts = [SimpleNamespace(track_id=0, moving=False), SimpleNamespace(track_id=1, moving=True)]
    out = moving_boxes_per_scan(tracks, verdicts, instances)
    assert list(out) == [0] and out[0] == [box_b]
