import math

import numpy as np
import pytest

from automos.errors import ValidationError
from automos.geometry import make_transform
from automos.io import Scan
from automos.removal import (VolumeGrid, aggregate_map, cell_occupancy, compute_proposals,
                             fit_ground_plane, pseudo_occupancy, ratio_test_cells, revert_ground,
                             scan_ratio_test)
from automos.synthetic import (EgoSpec, MovingBox, SceneSpec, SensorSpec, StaticBox,
                               generate_sequence)


def _scan(xyz, index=0):
    xyz = np.asarray(xyz, dtype=np.float32)
    return Scan(np.c_[xyz, np.zeros(len(xyz), np.float32)], index)


def _static_scene(n_scans=8, seed=4, **kw):
    spec = SceneSpec(seed=seed, static_boxes=[
        StaticBox((12.0, -4.0), (4.5, 1.8, 1.4), base=0.2, density=40),
        StaticBox((20.0, 10.0), (20.0, 2.0, 6.0), density=8),
        StaticBox((-6.0, 5.0), (0.4, 0.4, 4.0), density=60)], **kw)
    return generate_sequence(spec, n_scans)


def test_aggregate_single_scan(rng):
    pts = rng.normal(size=(40, 3))
    m = aggregate_map([_scan(pts)], [np.eye(4)])
    np.testing.assert_allclose(m.xyz, pts.astype(np.float32), atol=1e-6)


def test_aggregate_two_copies_and_provenance(rng):
    pts = rng.uniform(-5, 5, (30, 3))
    scans = [_scan(pts, 0), _scan(pts, 1)]
    m = aggregate_map(scans, [np.eye(4), make_transform(0, (10, 0, 0))])
    assert len(m) == 60
    np.testing.assert_allclose(m.xyz[30:] - m.xyz[:30], np.tile([10, 0, 0], (30, 1)), atol=1e-5)
    for k in rng.integers(0, 60, 15):
        t, i = m.lookup(int(k))
        back = scans[t].points[i, :3].astype(np.float64) + (10 * t, 0, 0)
        np.testing.assert_allclose(m.xyz[k], back, atol=1e-5)


def test_aggregate_length_mismatch():
    with pytest.raises(ValidationError):
        aggregate_map([_scan(np.zeros((2, 3)))], [])


def test_voxel_thinning_only_touches_map_copy(rng):
    pts = rng.uniform(0, 1, (500, 3))
    m = aggregate_map([_scan(pts)], [np.eye(4)], voxel_size=0.5)
    assert len(m) == 500
    assert m.n_voxels <= 8
    assert m.voxel_of.max() == m.n_voxels - 1


def test_pseudo_occupancy():
    assert pseudo_occupancy([0.2, 1.7, 0.9]) == pytest.approx(1.5)
    assert pseudo_occupancy([3.0]) == 0.0
    assert pseudo_occupancy([]) == 0.0


def test_cell_occupancy_ignores_outside():
    occ, cnt = cell_occupancy(np.array([0, 0, 1, -1]), np.array([0.0, 1.0, 2.0, 9.0]),
                              np.array([0.5, 1.2, 2.0, 9.0]), 3)
    np.testing.assert_allclose(occ, [1.2, 0.0, 0.0])
    np.testing.assert_array_equal(cnt, [2, 1, 0])


def test_cell_flagged_when_object_left():
    grid = VolumeGrid()
    # map column 1.5 m tall; query only sees flat ground in the same cell
    map_pts = np.array([[10.0, 0.1, 0.0], [10.1, 0.0, 1.5]])
    query = np.array([[10.05, 0.05, 0.0], [10.2, 0.1, 0.0]])
    mflags, qflags = scan_ratio_test(query, (0, 0), map_pts[:, :2], map_pts[:, 2], map_pts[:, 2], grid)
    assert mflags.all() and not qflags.any()
    # and the other way round: an object arrived
    mflags, qflags = scan_ratio_test(map_pts, (0, 0), query[:, :2], query[:, 2], query[:, 2], grid)
    assert qflags.all() and not mflags.any()


def test_unobserved_cell_not_flagged():
    grid = VolumeGrid()
    map_pts = np.array([[10.0, 0.1, 0.0], [10.1, 0.0, 1.5]])
    query = np.array([[-30.0, 4.0, 0.0]])
    mflags, _ = scan_ratio_test(query, (0, 0), map_pts[:, :2], map_pts[:, 2], map_pts[:, 2], grid)
    assert not mflags.any()


def test_equal_occupancy_never_dynamic():
    occ = np.array([0.0, 0.3, 1.5, 8.0])
    cnt = np.ones(4, int)
    for ratio in (0.1, 0.5, 1.0):
        a, b = ratio_test_cells(occ, cnt, occ, cnt, ratio, 0.2)
        assert not a.any() and not b.any()


def test_points_beyond_voi_never_flagged():
    grid = VolumeGrid(max_radius=20.0)
    map_pts = np.array([[25.0, 0.0, 0.0], [25.1, 0.0, 3.0]])
    query = np.array([[25.0, 0.0, 0.0], [25.2, 0.1, 0.0]])
    mflags, qflags = scan_ratio_test(query, (0, 0), map_pts[:, :2], map_pts[:, 2], map_pts[:, 2], grid)
    assert not mflags.any() and not qflags.any()
    assert (grid.cell_index(map_pts[:, :2]) == -1).all()


def test_static_scene_has_no_proposals():
    seq = _static_scene()
    props = compute_proposals(seq.scans, seq.poses, VolumeGrid())
    assert sum(int(p.sum()) for p in props) == 0


def test_static_scene_finer_grid_noiseless():
    seq = _static_scene(ground_noise=0.0, sensor=SensorSpec(noise_sigma=0.0), resample=False)
    for grid in (VolumeGrid(), VolumeGrid(n_rings=40, n_sectors=120)):
        props = compute_proposals(seq.scans, seq.poses, grid)
        assert sum(int(p.sum()) for p in props) == 0


def test_fast_mover_flagged_every_scan():
    spec = SceneSpec(seed=3, ego=EgoSpec(speed=0.0),
                     moving_boxes=[MovingBox([(5, 6), (60, 6)], 10.0, (4.5, 1.8, 1.5),
                                             base=0.25, density=40)],
                     static_boxes=[StaticBox((15, -6), (4, 2, 1.5), density=40)])
    seq = generate_sequence(spec, 10)
    props = compute_proposals(seq.scans, seq.poses)
    for p, truth in zip(props, seq.labels):
        assert truth.any()
        assert p[truth].mean() >= 0.8
        assert not p[~truth].any()


def _ground_with_box(rng, tilt_deg=0.0, n_ground=600):
    xy = rng.uniform([8, -2], [14, 2], (n_ground, 2))
    slope = math.tan(math.radians(tilt_deg))
    ground = np.c_[xy, slope * (xy[:, 0] - 8) + rng.normal(0, 0.01, n_ground)]
    box = np.c_[rng.uniform(10, 12, 200), rng.uniform(-0.8, 0.8, 200),
                slope * 2 + rng.uniform(0.4, 1.8, 200)]
    return np.vstack([ground, box]), n_ground


def test_revert_ground_keeps_box(rng):
    xyz, ng = _ground_with_box(rng)
    flags = np.ones(len(xyz), bool)
    out = revert_ground(flags, xyz, VolumeGrid())
    assert not out[:ng].any()
    assert out[ng:].all()


def test_revert_ground_tilted_plane(rng):
    xyz, ng = _ground_with_box(rng, tilt_deg=20.0)
    out = revert_ground(np.ones(len(xyz), bool), xyz, VolumeGrid())
    assert not out[:ng].any()


def test_revert_ground_rejects_steep_plane(rng):
    normal_plane = fit_ground_plane(_ground_with_box(rng, 20.0)[0], np.random.default_rng(0), 0.15)
    assert normal_plane is not None
    n, _ = normal_plane
    assert math.degrees(math.acos(n[2])) == pytest.approx(20.0, abs=1.0)
    wall = np.c_[rng.uniform(8, 9, 300), rng.uniform(-2, 2, 300), rng.uniform(0, 3, 300)]
    wall[:, 0] = 8 + wall[:, 2] * math.tan(math.radians(50))
    assert fit_ground_plane(wall, np.random.default_rng(0), 0.15) is None


def test_revert_ground_skips_elevated_object(rng):
    grid = VolumeGrid()
    # overhanging object alone in its cells, ground (1.73 m below the sensor) only around them
    box = np.c_[rng.uniform(10, 11.5, 200), rng.uniform(-0.8, 0.8, 200), rng.uniform(-0.5, 1.0, 200)]
    ground = np.c_[rng.uniform(4, 16, 4000), rng.uniform(-4, 4, 4000), np.full(4000, -1.73)]
    obj_cells = np.unique(grid.cell_index(box))
    ground = ground[~np.isin(grid.cell_index(ground), obj_cells)]
    xyz = np.vstack([box, ground])
    flags = np.zeros(len(xyz), bool)
    flags[:200] = rng.random(200) < 0.7
    out = revert_ground(flags, xyz, grid)
    np.testing.assert_array_equal(out, flags)


def test_revert_ground_too_few_points():
    xyz = np.array([[10.0, 0, 0], [10.5, 0.2, 0.01]])
    out = revert_ground(np.ones(2, bool), xyz, VolumeGrid())
    assert out.all()


def test_revert_ground_only_clears(rng):
    xyz, _ = _ground_with_box(rng)
    for _ in range(5):
        flags = rng.random(len(xyz)) < 0.5
        out = revert_ground(flags, xyz, VolumeGrid())
        assert not (out & ~flags).any()


def test_proposals_deterministic_across_executor():
    from concurrent.futures import ThreadPoolExecutor
    seq = _static_scene(n_scans=6, seed=5)
    spec = seq.spec
    spec.moving_boxes = [MovingBox([(0, 4), (40, 4)], 8.0, (4.5, 1.8, 1.5), base=0.25, density=40)]
    seq = generate_sequence(spec, 6)
    a = compute_proposals(seq.scans, seq.poses)
    with ThreadPoolExecutor(3) as ex:
        b = compute_proposals(seq.scans, seq.poses, executor=ex)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)
