"""Moving-class IoU: TD / (TD + FD + FS), summed over scans before dividing."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class ConfusionCounts:
    td: int = 0
    fd: int = 0
    fs: int = 0
    ts: int = 0

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.td + other.td, self.fd + other.fd,
                               self.fs + other.fs, self.ts + other.ts)

    @property
    def total(self) -> int:
        return self.td + self.fd + self.fs + self.ts


def confusion_counts(pred, truth) -> ConfusionCounts:
    pred = np.asarray(pred, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    if pred.shape != truth.shape:
        raise ValidationError(f"label length mismatch: {pred.shape} vs {truth.shape}")
    td = int(np.count_nonzero(pred & truth))
    fd = int(np.count_nonzero(pred & ~truth))
    fs = int(np.count_nonzero(~pred & truth))
    return ConfusionCounts(td, fd, fs, int(pred.size) - td - fd - fs)


def iou_mos(c: ConfusionCounts) -> float:
    """1.0 when no point is moving in either prediction or truth."""
    denom = c.td + c.fd + c.fs
    if denom == 0:
        return 1.0
    return c.td / denom


def is_degenerate(c: ConfusionCounts) -> bool:
    return c.td + c.fd + c.fs == 0


@dataclass
class SequenceReport:
    per_scan: list = field(default_factory=list)  # (name, ConfusionCounts)

    @property
    def total(self) -> ConfusionCounts:
        out = ConfusionCounts()
        for _, c in self.per_scan:
            out = out + c
        return out

    @property
    def iou(self) -> float:
        return iou_mos(self.total)

    def table(self) -> str:
        lines = [f"{'scan':>10} {'TD':>9} {'FD':>9} {'FS':>9} {'TS':>10} {'IoU':>7}"]
        for name, c in self.per_scan:
            lines.append(f"{name:>10} {c.td:9d} {c.fd:9d} {c.fs:9d} {c.ts:10d} {iou_mos(c):7.4f}")
        t = self.total
        lines.append(f"{'total':>10} {t.td:9d} {t.fd:9d} {t.fs:9d} {t.ts:10d} {self.iou:7.4f}")
        return "\n".join(lines)

    def key_values(self) -> str:
        t = self.total
        kv = [f"scans={len(self.per_scan)}", f"td={t.td}", f"fd={t.fd}", f"fs={t.fs}",
              f"ts={t.ts}", f"iou_mos={self.iou:.6f}", f"degenerate={int(is_degenerate(t))}"]
        return "\n".join(kv)


def sequence_report(per_scan_counts) -> SequenceReport:
    items = list(per_scan_counts)
    if not items:
        raise ValidationError("no scans to report")
    if not isinstance(items[0], tuple):
        items = [(str(k), c) for k, c in enumerate(items)]
    return SequenceReport(items)
