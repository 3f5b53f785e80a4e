"""QoE metrics and session reporting.

SSIM is the standard form with an 8x8 uniform sliding window (valid
positions only), C1=(0.01*255)^2, C2=(0.03*255)^2; tri-channel inputs are
averaged per channel.  PSNR uses the 255 peak and an infinity sentinel for
identical planes.
"""

from __future__ import annotations

import csv
import enum
import json
import math
import statistics
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy.ndimage import uniform_filter

SSIM_WINDOW = 8
_C1 = (0.01 * 255) ** 2
_C2 = (0.03 * 255) ** 2


class Outcome(str, enum.Enum):
    CLEAN = "clean"
    PARTIAL = "partial_recoverable"
    LOST_FRAME = "lost_frame"
    LOST_GOP = "lost_gop"

    @property
    def non_recovered(self) -> bool:
        return self in (Outcome.LOST_FRAME, Outcome.LOST_GOP)

    @property
    def corrupted_in_transit(self) -> bool:
        return self is not Outcome.CLEAN


def _ssim_single(a: np.ndarray, b: np.ndarray) -> float:
    a = a.astype(np.float64)
    b = b.astype(np.float64)
    w = SSIM_WINDOW
    h, wd = a.shape
    if h < w or wd < w:
        raise ValueError("plane smaller than the %dx%d SSIM window" % (w, w))
    mu_a = uniform_filter(a, w, mode="constant")
    mu_b = uniform_filter(b, w, mode="constant")
    mu_aa = uniform_filter(a * a, w, mode="constant")
    mu_bb = uniform_filter(b * b, w, mode="constant")
    mu_ab = uniform_filter(a * b, w, mode="constant")
    # index i+w//2 of the filtered array holds the mean of the window
    # starting at i; keep only fully-interior windows
    half = w // 2
    sl = (slice(half, h - w + 1 + half), slice(half, wd - w + 1 + half))
    mu_a, mu_b = mu_a[sl], mu_b[sl]
    var_a = mu_aa[sl] - mu_a * mu_a
    var_b = mu_bb[sl] - mu_b * mu_b
    cov = mu_ab[sl] - mu_a * mu_b
    num = (2 * mu_a * mu_b + _C1) * (2 * cov + _C2)
    den = (mu_a ** 2 + mu_b ** 2 + _C1) * (var_a + var_b + _C2)
    return float(np.mean(num / den))


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    if a.shape != b.shape:
        raise ValueError("shape mismatch %r vs %r" % (a.shape, b.shape))
    if a.ndim == 3:
        return float(np.mean([_ssim_single(a[..., c], b[..., c])
                              for c in range(a.shape[2])]))
    return _ssim_single(a, b)


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    if a.shape != b.shape:
        raise ValueError("shape mismatch %r vs %r" % (a.shape, b.shape))
    mse = float(np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(255.0 ** 2 / mse)


@dataclass(frozen=True)
class FreezeEvent:
    start_ts: float
    duration_ms: float


def freeze_stats(freeze_log: list[FreezeEvent]) -> tuple[float, float, int]:
    """(median ms, total ms, count) over freeze-event durations."""
    if not freeze_log:
        return 0.0, 0.0, 0
    durations = [f.duration_ms for f in freeze_log]
    return statistics.median(durations), sum(durations), len(durations)


def overhead(bytes_data: int, bytes_parity: int, bytes_dup: int) -> float:
    """(parity + duplicated) / data byte fraction."""
    if bytes_data <= 0:
        raise ValueError("bytes_data must be > 0")
    return (bytes_parity + bytes_dup) / bytes_data


@dataclass
class FrameRecord:
    frame_id: int
    modality: str
    outcome: Outcome
    ssim: float | None = None
    psnr: float | None = None
    recovered: bool = False


def non_recovered(records: list[FrameRecord]) -> float:
    """Percentage of frames whose outcome is lost_frame or lost_gop."""
    if not records:
        return 0.0
    lost = sum(1 for r in records if r.outcome.non_recovered)
    return 100.0 * lost / len(records)


@dataclass
class SessionReport:
    mode: str
    seed: int
    config: dict
    records: list[FrameRecord] = field(default_factory=list)
    freeze_log: list[FreezeEvent] = field(default_factory=list)
    bytes_data: int = 0
    bytes_parity: int = 0
    bytes_dup: int = 0
    deadline_misses: int = 0

    def filtered_records(self, corrupted_only: bool = False) -> list[FrameRecord]:
        if not corrupted_only:
            return self.records
        return [r for r in self.records if r.outcome.corrupted_in_transit]

    def summary(self, corrupted_only: bool = False) -> dict:
        recs = self.filtered_records(corrupted_only)
        med_freeze, total_freeze, n_freeze = freeze_stats(self.freeze_log)
        by_mod = {}
        for mod in ("rgb", "depth"):
            vals = [r.ssim for r in recs if r.modality == mod and r.ssim is not None]
            by_mod[mod] = statistics.median(vals) if vals else None
        ov = (overhead(self.bytes_data, self.bytes_parity, self.bytes_dup)
              if self.bytes_data else 0.0)
        return {
            "mode": self.mode,
            "frames": len(recs),
            "non_recovered_pct": non_recovered(recs),
            "median_freeze_ms": med_freeze,
            "total_freeze_ms": total_freeze,
            "freeze_count": n_freeze,
            "overhead": ov,
            "median_ssim_rgb": by_mod["rgb"],
            "median_ssim_depth": by_mod["depth"],
            "deadline_misses": self.deadline_misses,
        }

    def to_dict(self, corrupted_only: bool = False) -> dict:
        def num(x):
            if x is None:
                return None
            if isinstance(x, float):
                return "inf" if math.isinf(x) else round(x, 6)
            return x
        return {
            "mode": self.mode,
            "seed": self.seed,
            "config": self.config,
            "bytes": {"data": self.bytes_data, "parity": self.bytes_parity,
                      "dup": self.bytes_dup},
            "summary": {k: num(v) for k, v in self.summary(corrupted_only).items()},
            "freeze_log": [{"start_ts": num(f.start_ts),
                            "duration_ms": num(f.duration_ms)}
                           for f in self.freeze_log],
            "frames": [{"frame_id": r.frame_id, "modality": r.modality,
                        "outcome": r.outcome.value, "ssim": num(r.ssim),
                        "psnr": num(r.psnr), "recovered": r.recovered}
                       for r in self.filtered_records(corrupted_only)],
        }


CSV_COLUMNS = ["frame_id", "modality", "outcome", "ssim", "psnr", "recovered"]
CSV_SCHEMA_VERSION = 1


def emit_report(report: SessionReport, path, fmt: str = "json",
                corrupted_only: bool = False) -> None:
    """Write a session report deterministically as JSON or CSV."""
    if fmt == "json":
        with open(path, "w") as f:
            json.dump(report.to_dict(corrupted_only), f, indent=2, sort_keys=True)
            f.write("\n")
    elif fmt == "csv":
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["#schema", CSV_SCHEMA_VERSION])
            w.writerow(CSV_COLUMNS)
            for r in report.filtered_records(corrupted_only):
                w.writerow([r.frame_id, r.modality, r.outcome.value,
                            "" if r.ssim is None else round(r.ssim, 6),
                            "" if r.psnr is None else
                            ("inf" if math.isinf(r.psnr) else round(r.psnr, 6)),
                            int(r.recovered)])
    else:
        raise ValueError("unknown report format %r" % fmt)


def emit_series(report: SessionReport, path, fps: float) -> None:
    """Per-frame plot series: t_ms, ssim_rgb, ssim_depth, frozen flag."""
    by_frame: dict[int, dict] = {}
    for r in report.records:
        by_frame.setdefault(r.frame_id, {})[r.modality] = r
    frozen_ids = set()
    interval = 1000.0 / fps
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["t_ms", "ssim_rgb", "ssim_depth", "frozen"])
        for fid in sorted(by_frame):
            recs = by_frame[fid]
            rgb = recs.get("rgb")
            dep = recs.get("depth")
            frozen = any(rec.outcome.non_recovered for rec in recs.values())
            w.writerow([round(fid * interval, 3),
                        "" if rgb is None or rgb.ssim is None else round(rgb.ssim, 6),
                        "" if dep is None or dep.ssim is None else round(dep.ssim, 6),
                        int(frozen)])
