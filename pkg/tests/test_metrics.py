import csv
import json
import math

import numpy as np
import pytest

from rgbdstream.metrics import (FrameRecord, FreezeEvent, Outcome,
                                SessionReport, emit_report, emit_series,
                                freeze_stats, non_recovered, overhead, psnr,
                                ssim)

SSIM_WINDOW = 8
_C1 = (0.01 * 255) ** 2
_C2 = (0.03 * 255) ** 2


def _ssim_reference(a, b):
    """Naive double-loop SSIM over all fully-interior 8x8 windows."""
    a = a.astype(np.float64)
    b = b.astype(np.float64)
    h, w = a.shape
    vals = []
    for i in range(h - SSIM_WINDOW + 1):
        for j in range(w - SSIM_WINDOW + 1):
            wa = a[i:i + SSIM_WINDOW, j:j + SSIM_WINDOW]
            wb = b[i:i + SSIM_WINDOW, j:j + SSIM_WINDOW]
            mu_a, mu_b = wa.mean(), wb.mean()
            va, vb = wa.var(), wb.var()
            cov = ((wa - mu_a) * (wb - mu_b)).mean()
            num = (2 * mu_a * mu_b + _C1) * (2 * cov + _C2)
            den = (mu_a ** 2 + mu_b ** 2 + _C1) * (va + vb + _C2)
            vals.append(num / den)
    return float(np.mean(vals))


class TestSsim:
    def test_identity_is_one(self):
        x = np.random.default_rng(0).integers(0, 256, (32, 32), dtype=np.uint8)
        assert ssim(x, x) == pytest.approx(1.0)

    def test_constant_pair_is_one(self):
        a = np.full((16, 16), 40, np.uint8)
        b = np.full((16, 16), 40, np.uint8)
        assert ssim(a, b) == pytest.approx(1.0)

    def test_inverted_mid_contrast_is_low(self):
        rng = np.random.default_rng(1)
        x = rng.integers(64, 192, (64, 64), dtype=np.uint8)
        assert ssim(x, 255 - x) < 0.2

    def test_matches_reference_implementation(self):
        rng = np.random.default_rng(2)
        a = rng.integers(0, 256, (24, 20), dtype=np.uint8)
        b = np.clip(a.astype(int) + rng.integers(-30, 30, a.shape), 0,
                    255).astype(np.uint8)
        assert ssim(a, b) == pytest.approx(_ssim_reference(a, b), abs=1e-9)

    def test_tri_channel_is_channel_mean(self):
        rng = np.random.default_rng(3)
        a = rng.integers(0, 256, (16, 16, 3), dtype=np.uint8)
        b = rng.integers(0, 256, (16, 16, 3), dtype=np.uint8)
        per_chan = [ssim(a[..., c], b[..., c]) for c in range(3)]
        assert ssim(a, b) == pytest.approx(np.mean(per_chan))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            ssim(np.zeros((16, 16), np.uint8), np.zeros((16, 8), np.uint8))

    def test_too_small_for_window(self):
        with pytest.raises(ValueError):
            ssim(np.zeros((4, 4), np.uint8), np.zeros((4, 4), np.uint8))


class TestPsnr:
    def test_uniform_error_one(self):
        a = np.full((32, 32), 100, np.uint8)
        b = np.full((32, 32), 101, np.uint8)
        # 10*log10(255^2 / 1) = 48.1308 dB
        assert psnr(a, b) == pytest.approx(48.1308, abs=1e-3)

    def test_full_swing_is_zero(self):
        a = np.zeros((8, 8), np.uint8)
        b = np.full((8, 8), 255, np.uint8)
        assert psnr(a, b) == pytest.approx(0.0)

    def test_identical_is_inf(self):
        a = np.arange(64, dtype=np.uint8).reshape(8, 8)
        assert psnr(a, a) == math.inf

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            psnr(np.zeros((8, 8)), np.zeros((8, 9)))


class TestFreezeStats:
    def test_empty(self):
        assert freeze_stats([]) == (0.0, 0.0, 0)

    def test_median_and_total(self):
        log = [FreezeEvent(0.0, 33.0), FreezeEvent(100.0, 967.0),
               FreezeEvent(2000.0, 500.0)]
        med, total, n = freeze_stats(log)
        assert med == 500.0
        assert total == 1500.0
        assert n == 3

    def test_even_count_median(self):
        log = [FreezeEvent(0.0, 33.0), FreezeEvent(100.0, 967.0)]
        assert freeze_stats(log)[0] == 500.0


class TestOverhead:
    def test_formula(self):
        assert overhead(10000, 500, 300) == pytest.approx(0.08)

    def test_zero_extra(self):
        assert overhead(1234, 0, 0) == 0.0

    def test_no_data_rejected(self):
        with pytest.raises(ValueError):
            overhead(0, 1, 1)


class TestOutcomes:
    def test_non_recovered_membership(self):
        assert Outcome.LOST_FRAME.non_recovered
        assert Outcome.LOST_GOP.non_recovered
        assert not Outcome.PARTIAL.non_recovered
        assert not Outcome.CLEAN.non_recovered

    def test_corrupted_filter_set(self):
        corrupted = {o for o in Outcome if o.corrupted_in_transit}
        assert corrupted == {Outcome.PARTIAL, Outcome.LOST_FRAME,
                             Outcome.LOST_GOP}

    def test_non_recovered_percentage(self):
        recs = [FrameRecord(0, "rgb", Outcome.CLEAN),
                FrameRecord(1, "rgb", Outcome.PARTIAL),
                FrameRecord(2, "rgb", Outcome.LOST_FRAME),
                FrameRecord(3, "rgb", Outcome.LOST_GOP)]
        assert non_recovered(recs) == 50.0
        assert non_recovered([]) == 0.0


def _report():
    rep = SessionReport(mode="revo", seed=7, config={"fps": 30})
    rep.records = [
        FrameRecord(0, "rgb", Outcome.CLEAN, ssim=1.0, psnr=math.inf),
        FrameRecord(0, "depth", Outcome.CLEAN, ssim=1.0, psnr=math.inf),
        FrameRecord(1, "rgb", Outcome.PARTIAL, ssim=0.91, psnr=30.5,
                    recovered=True),
        FrameRecord(1, "depth", Outcome.LOST_FRAME, ssim=0.6, psnr=18.0),
    ]
    rep.freeze_log = [FreezeEvent(33.33, 66.67)]
    rep.bytes_data = 10000
    rep.bytes_parity = 600
    rep.bytes_dup = 200
    return rep


class TestSessionReport:
    def test_summary_fields(self):
        s = _report().summary()
        assert s["frames"] == 4
        assert s["non_recovered_pct"] == 25.0
        assert s["median_freeze_ms"] == 66.67
        assert s["overhead"] == pytest.approx(0.08)
        assert s["median_ssim_rgb"] == pytest.approx(0.955)
        assert s["median_ssim_depth"] == pytest.approx(0.8)

    def test_corrupted_only_filter(self):
        recs = _report().filtered_records(corrupted_only=True)
        assert {(r.frame_id, r.modality) for r in recs} == \
            {(1, "rgb"), (1, "depth")}
        s = _report().summary(corrupted_only=True)
        assert s["frames"] == 2
        assert s["non_recovered_pct"] == 50.0

    def test_emit_json_deterministic(self, tmp_path):
        p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
        emit_report(_report(), p1, "json")
        emit_report(_report(), p2, "json")
        assert p1.read_bytes() == p2.read_bytes()
        doc = json.loads(p1.read_text())
        assert doc["summary"]["non_recovered_pct"] == 25.0
        assert doc["frames"][0]["psnr"] == "inf"

    def test_emit_csv(self, tmp_path):
        p = tmp_path / "r.csv"
        emit_report(_report(), p, "csv")
        rows = list(csv.reader(p.open()))
        assert rows[0] == ["#schema", "1"]
        assert rows[1] == ["frame_id", "modality", "outcome", "ssim", "psnr",
                           "recovered"]
        assert len(rows) == 2 + 4
        assert rows[4] == ["1", "rgb", "partial_recoverable", "0.91", "30.5", "1"]

    def test_emit_unknown_format(self, tmp_path):
        with pytest.raises(ValueError):
            emit_report(_report(), tmp_path / "x", "yaml")

    def test_emit_series(self, tmp_path):
        p = tmp_path / "s.csv"
        emit_series(_report(), p, fps=30.0)
        rows = list(csv.reader(p.open()))
        assert rows[0] == ["t_ms", "ssim_rgb", "ssim_depth", "frozen"]
        assert len(rows) == 3          # header + 2 frames
        assert rows[1] == ["0.0", "1.0", "1.0", "0"]
        assert rows[2][0] == "33.333"
        assert rows[2][3] == "1"       # depth lost_frame marks the frame frozen
