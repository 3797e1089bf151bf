import json

import numpy as np
import pytest

from automos.cli import main
from automos.errors import ValidationError
from automos.geometry import points_in_box
from automos.io import label_path, load_sequence, read_labels, write_labels
from automos.pipeline import clean_map
from automos.removal import voxel_keys
from automos.synthetic import (EgoSpec, MovingBox, SceneSpec, SensorSpec, StaticBox,
                               generate_sequence, save_scene)


def _scene(movers=True):
    statics = [StaticBox((15, -4), (4.5, 1.8, 1.45), base=0.2, density=40),
               StaticBox((25, 10), (20, 2, 6), density=6)]
    moving = [MovingBox([(-10, 4), (60, 4)], 6.0, (4.5, 1.8, 1.5), base=0.25, density=40),
              MovingBox([(40, -8), (0, -8)], 4.0, (4.5, 1.8, 1.5), base=0.25, density=40)]
    return SceneSpec(seed=2, static_boxes=statics, moving_boxes=moving if movers else [],
                     sensor=SensorSpec(n_ground=6000), ego=EgoSpec(speed=1.0))


@pytest.fixture(scope="module")
def small_seq(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    save_scene(_scene(), root / "scene.yaml", n_scans=50)
    assert main(["simulate", str(root / "scene.yaml"), "-o", str(root / "seq")]) == 0
    return root / "seq"


def test_label_and_eval(small_seq, capsys):
    capsys.readouterr()
    assert main(["label", str(small_seq), "-o", str(small_seq / "pred"),
                 "--summary", str(small_seq / "summary.json")]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["scans"] == 50 and summary["moving_tracks"] >= 2
    assert set(summary["timings_s"]) == {"proposals", "clustering", "tracking", "verdicts", "painting"}
    assert json.loads((small_seq / "summary.json").read_text()) == summary
    assert main(["eval", str(small_seq / "pred"), str(small_seq / "labels")]) == 0
    kv = dict(line.split("=") for line in capsys.readouterr().out.split())
    assert float(kv["iou_mos"]) >= 0.9
    assert main(["eval", "--per-scan", str(small_seq / "pred"), str(small_seq / "labels")]) == 0
    assert "total" in capsys.readouterr().out


def test_label_rerun_identical_and_cached(small_seq, tmp_path, capsys):
    outs = []
    for k in range(3):
        out = tmp_path / f"o{k}"
        cache = ["--cache", str(tmp_path / "cache")] if k else []
        assert main(["label", str(small_seq), "-o", str(out), *cache]) == 0
        outs.append({p.name: p.read_bytes() for p in out.glob("*.label")})
    assert (tmp_path / "cache" / "proposals.npz").exists()
    assert (tmp_path / "cache" / "instances.json").exists()
    assert outs[0] == outs[1] == outs[2]


def test_all_static_sequence(tmp_path, capsys):
    seq_dir = tmp_path / "seq"
    save_scene(_scene(movers=False), tmp_path / "s.yaml", n_scans=15)
    assert main(["simulate", str(tmp_path / "s.yaml"), "-o", str(seq_dir)]) == 0
    assert main(["label", str(seq_dir), "-o", str(tmp_path / "pred")]) == 0
    assert not any(read_labels(p).any() for p in (tmp_path / "pred").glob("*.label"))

    # all-static labels: cleaned map equals the thinned aggregate of every point
    out = tmp_path / "map.txt"
    assert main(["clean-map", str(seq_dir), "--labels", str(tmp_path / "pred"), "-o", str(out)]) == 0
    cleaned = np.loadtxt(out)
    scans, poses = load_sequence(seq_dir)
    full = np.concatenate([s.points[:, :3].astype(np.float64) @ T[:3, :3].T + T[:3, 3]
                           for s, T in zip(scans, poses)])
    assert len(cleaned) == len(np.unique(voxel_keys(full, 0.1)))
    ref = clean_map(scans, poses, [np.zeros(len(s), bool) for s in scans], 0.1)
    np.testing.assert_allclose(cleaned, ref, atol=1e-4)


def test_clean_map_drops_moving_points(small_seq, tmp_path, capsys):
    scans, poses = load_sequence(small_seq)
    truth = [read_labels(label_path(small_seq / "labels", s.index)) for s in scans]
    pts = clean_map(scans, poses, truth, 0.1)
    full = clean_map(scans, poses, [np.zeros_like(t) for t in truth], 0.1)
    assert len(pts) < len(full)
    seq = generate_sequence(_scene(), 50)
    S = seq.n_static
    for boxes, moving in zip(seq.object_boxes, seq.object_moving):
        for k in range(S, len(boxes)):
            if moving[k]:
                assert not points_in_box(pts, boxes[k], margin=0.0).any()


def test_clean_map_errors(small_seq, tmp_path, capsys):
    with pytest.raises(ValidationError):
        clean_map([], [], [])
    pred = tmp_path / "pred"
    pred.mkdir()
    args = ["clean-map", str(small_seq), "--labels", str(pred), "-o", str(tmp_path / "m.txt")]
    assert main(args) == 2  # missing label file
    assert "missing label file" in capsys.readouterr().err
    write_labels(np.zeros(3, bool), label_path(pred, 0))
    assert main(args) == 1  # wrong label count for scan 0
    assert "labels for a scan" in capsys.readouterr().err


def test_eval_mismatched_sets(small_seq, tmp_path, capsys):
    pred = tmp_path / "pred"
    pred.mkdir()
    write_labels(np.zeros(3, bool), label_path(pred, 0))
    assert main(["eval", str(pred), str(small_seq / "labels")]) == 1
    assert "differ" in capsys.readouterr().err


def test_label_errors(small_seq, tmp_path, capsys):
    assert main(["label", str(tmp_path / "missing")]) == 2
    assert main(["label", str(small_seq), "--poses", str(tmp_path / "nope.txt")]) == 2
    short = tmp_path / "short.txt"
    short.write_text("1 0 0 0 0 1 0 0 0 0 1 0\n")
    assert main(["label", str(small_seq), "--poses", str(short)]) == 1
    assert main(["label", str(small_seq), "--threads", "0"]) == 1
    bad = tmp_path / "bad.yaml"
    bad.write_text("t_d: -1\n")
    assert main(["label", str(small_seq), "--config", str(bad)]) == 1
    capsys.readouterr()


def test_env_override_unknown_key(small_seq, monkeypatch, capsys):
    monkeypatch.setenv("AUTOMOS_NOT_A_KEY", "1")
    assert main(["label", str(small_seq)]) == 1
    assert "AUTOMOS_NOT_A_KEY" in capsys.readouterr().err


def test_simulate_preset_and_errors(tmp_path, capsys):
    assert main(["simulate", "--preset", "urban", "--scans", "2", "-o", str(tmp_path / "u")]) == 0
    assert len(list((tmp_path / "u" / "velodyne").glob("*.bin"))) == 2
    assert main(["simulate", "-o", str(tmp_path / "x")]) == 1
    bad = tmp_path / "bad.yaml"
    bad.write_text("moving_boxes:\n  - {waypoints: [[0, 0]], speed: 1, extents: [1, 1, 1]}\n")
    assert main(["simulate", str(bad), "-o", str(tmp_path / "y")]) == 1
    capsys.readouterr()
