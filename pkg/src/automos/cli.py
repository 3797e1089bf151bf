"""Command line entry point: ``automos label | eval | simulate | clean-map``.

Exit codes: 0 success, 1 invalid input or configuration, 2 I/O or file-format error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from .config import load_config
from .errors import FormatError, ValidationError
from .evaluation import confusion_counts, sequence_report
from .io import label_path, load_sequence, read_labels, write_labels
from .pipeline import clean_map, label_sequence
from .synthetic import generate_sequence, load_scene, urban_scene, write_sequence

log = logging.getLogger("automos")


def _config(args):
    return load_config(args.config)


def cmd_label(args) -> int:
    cfg = _config(args)
    scans, poses = load_sequence(args.sequence, args.poses, args.calib)
    out = Path(args.output or Path(args.sequence) / "predictions")
    out.mkdir(parents=True, exist_ok=True)
    result = label_sequence(scans, poses, cfg, threads=args.threads, cache_dir=args.cache)
    for scan, moving in zip(scans, result.labels):
        write_labels(moving, label_path(out, scan.index))
    summary = result.summary()
    summary["output"] = str(out)
    text = json.dumps(summary, indent=2)
    if args.summary:
        Path(args.summary).write_text(text + "\n")
    print(text)
    return 0


def cmd_eval(args) -> int:
    pred_dir, truth_dir = Path(args.predictions), Path(args.truth)
    for d in (pred_dir, truth_dir):
        if not d.is_dir():
            raise FileNotFoundError(f"not a directory: {d}")
    pred = {p.name for p in pred_dir.glob("*.label")}
    truth = {p.name for p in truth_dir.glob("*.label")}
    if not truth:
        raise ValidationError(f"no label files in {truth_dir}")
    if pred != truth:
        missing = sorted(truth - pred)[:5]
        extra = sorted(pred - truth)[:5]
        raise ValidationError(f"label file sets differ ({len(pred)} vs {len(truth)}); "
                              f"missing {missing}, unexpected {extra}")
    items = []
    for name in sorted(truth):
        t = read_labels(truth_dir / name)
        p = read_labels(pred_dir / name, n_points=len(t))
        items.append((Path(name).stem, confusion_counts(p, t)))
    report = sequence_report(items)
    print(report.table() if args.per_scan else report.key_values())
    return 0


def cmd_simulate(args) -> int:
    if args.scene and args.preset:
        raise ValidationError("give either a scene file or --preset, not both")
    if args.scene:
        spec, n_scans, dt = load_scene(args.scene)
    elif args.preset == "urban":
        spec, n_scans, dt = urban_scene(seed=args.seed or 0), 200, 0.1
    else:
        raise ValidationError("a scene file or --preset is required")
    if args.seed is not None:
        spec.seed = args.seed
    if args.scans is not None:
        n_scans = args.scans
    seq = generate_sequence(spec, n_scans, dt)
    out = write_sequence(seq, args.output)
    print(f"wrote {n_scans} scans to {out}")
    return 0


def cmd_clean_map(args) -> int:
    cfg = _config(args)
    scans, poses = load_sequence(args.sequence, args.poses, args.calib)
    labels = []
    for scan in scans:
        path = label_path(args.labels, scan.index)
        if not path.exists():
            raise FileNotFoundError(f"missing label file {path}")
        labels.append(read_labels(path, n_points=len(scan)))
    voxel = args.voxel if args.voxel is not None else cfg.clean_map_voxel
    if voxel <= 0:
        raise ValidationError("voxel size must be positive")
    pts = clean_map(scans, poses, labels, voxel)
    np.savetxt(args.output, pts, fmt="%.4f")
    print(f"wrote {len(pts)} points to {args.output}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="automos",
                                     description="Offline moving-object labels for LiDAR sequences.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_config=True):
        if needs_config:
            p.add_argument("--config", help="YAML file with pipeline parameters "
                                            "(AUTOMOS_<KEY> env vars override it)")
        p.add_argument("--poses", help="pose file (default: <sequence>/poses.txt)")
        p.add_argument("--calib", help="calibration file (default: <sequence>/calib.txt if present)")

    p = sub.add_parser("label", help="label every scan of a sequence")
    p.add_argument("sequence", help="sequence directory with velodyne/ and poses.txt")
    p.add_argument("-o", "--output", help="label directory (default: <sequence>/predictions)")
    p.add_argument("--threads", type=int, default=1, help="worker threads for per-scan stages")
    p.add_argument("--cache", help="directory for reusable proposal/instance files")
    p.add_argument("--summary", help="also write the run summary JSON here")
    common(p)
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("eval", help="moving-class IoU of predicted against true labels")
    p.add_argument("predictions")
    p.add_argument("truth")
    p.add_argument("--per-scan", action="store_true", help="print a per-scan table")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("simulate", help="write a synthetic sequence with truth labels")
    p.add_argument("scene", nargs="?", help="YAML scene file")
    p.add_argument("--preset", choices=["urban"], help="use a built-in scene")
    p.add_argument("-o", "--output", required=True, help="output sequence directory")
    p.add_argument("--scans", type=int, help="override the number of scans")
    p.add_argument("--seed", type=int, help="override the scene seed")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("clean-map", help="aggregate the static-labelled points into a map")
    p.add_argument("sequence")
    p.add_argument("--labels", required=True, help="label directory")
    p.add_argument("-o", "--output", required=True, help="ASCII x y z output file")
    p.add_argument("--voxel", type=float, help="thinning voxel size in m")
    common(p)
    p.set_defaults(func=cmd_clean_map)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "threads", 1) < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except FormatError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (ValidationError, yaml.YAMLError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
