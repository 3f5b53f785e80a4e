import numpy as np
import pytest

from rgbdstream import codec
from rgbdstream.codec import CodecConfig
from rgbdstream.fec import ProtectionMode, ProtectionPolicy, plan_protection
from rgbdstream.frames import FrameKind, GoPSpec, Modality
from rgbdstream.metrics import Outcome
from rgbdstream.packet import packetize
from rgbdstream.receiver import AnchorError, Receiver
from rgbdstream.synthetic import translating_clip

GOP = GoPSpec(gop_len=30, fps=30)
CFG = CodecConfig()
PAYLOAD = {Modality.RGB: 1024, Modality.DEPTH: 512}


class _Encoder:
    """Encodes a clip frame by frame, mirroring the sender's reference chain."""

    def __init__(self, policy=None):
        self.policy = policy or ProtectionPolicy()
        self.refs = {m: None for m in Modality}

    def packets(self, frame, modality):
        gop_id, kind = frame.frame_id // GOP.gop_len, \
            (FrameKind.I if frame.frame_id % GOP.gop_len == 0 else FrameKind.P)
        plane = frame.plane(modality)
        if kind == FrameKind.I:
            enc = codec.encode_i(plane, CFG, frame_id=frame.frame_id,
                                 gop_id=gop_id, modality=modality)
        else:
            enc = codec.encode_p(plane, self.refs[modality], CFG,
                                 frame_id=frame.frame_id, gop_id=gop_id,
                                 modality=modality)
        self.refs[modality], _ = codec.decode(
            enc, None if kind == FrameKind.I else self.refs[modality])
        plan = plan_protection(kind, enc.encoded_len, self.policy,
                               PAYLOAD[modality], header_len=len(enc.header))
        return packetize(enc, plan)


def _rx(l7=True, **kw):
    return Receiver(GOP, CFG, payload_len=PAYLOAD, l7_enabled=l7, **kw)


def _feed(rx, pkts, now=0.0, drop_indices=()):
    evt = None
    for i, p in enumerate(pkts):
        if i in drop_indices:
            continue
        out = rx.ingest_packet(p, now)
        evt = out or evt
    return evt


@pytest.fixture(scope="module")
def clip():
    return translating_clip(60, 64, 64, seed=0)


class TestDeadlines:
    def test_example(self):
        rx = _rx()
        rx.set_anchor(1000.0)
        assert rx.deadline_for(0) == 1000.0
        assert rx.deadline_for(30) == pytest.approx(2000.0)
        assert rx.deadline_for(1) == pytest.approx(1000.0 + 1000.0 / 30.0)

    def test_anchor_required(self):
        with pytest.raises(AnchorError):
            _rx().deadline_for(0)

    def test_anchor_set_once(self):
        rx = _rx()
        rx.set_anchor(0.0)
        with pytest.raises(AnchorError):
            rx.set_anchor(1.0)


class TestIngest:
    def test_duplicate_shard_ignored(self, clip):
        rx = _rx()
        pkts = _Encoder().packets(clip[0], Modality.RGB)
        rx.ingest_packet(pkts[0], 0.0)
        assert rx.ingest_packet(pkts[0], 1.0) is None
        asm = rx.assemblies[(0, Modality.RGB)]
        assert len(asm.shards) == 1

    def test_completion_event_on_reconstructible(self, clip):
        rx = _rx()
        pkts = _Encoder().packets(clip[0], Modality.RGB)
        assert pkts[-1].is_parity    # plan for I-frames includes parity
        evt = None
        # drop data shard 0; deliver the rest plus parity
        for p in pkts[1:]:
            evt = rx.ingest_packet(p, 5.0) or evt
        assert evt is not None
        assert evt.outcome == Outcome.CLEAN and evt.complete_ts == 5.0

    def test_late_packet_after_finalize_discarded(self, clip):
        rx = _rx()
        pkts = _Encoder().packets(clip[0], Modality.RGB)
        _feed(rx, pkts[:1])
        rx.finalize_frame(0, Modality.RGB)
        assert rx.ingest_packet(pkts[1], 99.0) is None
        assert (0, Modality.RGB) not in rx.assemblies or \
            1 not in rx.assemblies[(0, Modality.RGB)].shards


class TestFinalizeI:
    def test_clean_decode(self, clip):
        rx = _rx()
        _feed(rx, _Encoder().packets(clip[0], Modality.RGB))
        out = rx.finalize_frame(0, Modality.RGB)
        assert out.outcome == Outcome.CLEAN
        assert out.plane is not None and not out.mask.any

    def test_fec_recovers_missing_data_shards(self, clip):
        rx = _rx()
        pkts = _Encoder().packets(clip[0], Modality.RGB)
        n_parity = sum(p.is_parity for p in pkts)
        assert n_parity >= 2
        clean_rx = _rx()
        _feed(clean_rx, pkts)
        expect = clean_rx.finalize_frame(0, Modality.RGB).plane
        _feed(rx, pkts, drop_indices={1, 2})
        out = rx.finalize_frame(0, Modality.RGB)
        assert out.outcome == Outcome.CLEAN
        assert (out.plane == expect).all()

    def test_unreconstructible_collapses_gop(self, clip):
        enc = _Encoder()
        rx = _rx()
        pkts = enc.packets(clip[0], Modality.RGB)
        n_parity = sum(p.is_parity for p in pkts)
        # drop more shards than the parity can absorb
        _feed(rx, pkts, drop_indices=set(range(n_parity + 1)))
        out = rx.finalize_frame(0, Modality.RGB)
        assert out.outcome == Outcome.LOST_GOP
        # every later frame of the GoP classifies LostGoP, received or not
        p_pkts = enc.packets(clip[1], Modality.RGB)
        _feed(rx, p_pkts)
        assert rx.finalize_frame(1, Modality.RGB).outcome == Outcome.LOST_GOP
        assert rx.finalize_frame(7, Modality.RGB).outcome == Outcome.LOST_GOP

    def test_next_i_frame_ends_collapse(self, clip):
        enc = _Encoder()
        rx = _rx()
        pkts0 = enc.packets(clip[0], Modality.RGB)
        for f in clip[1:30]:
            enc.packets(f, Modality.RGB)      # advance sender reference chain
        pkts30 = enc.packets(clip[30], Modality.RGB)
        _feed(rx, pkts0, drop_indices=set(range(len(pkts0))))
        assert rx.finalize_frame(0, Modality.RGB).outcome == Outcome.LOST_GOP
        _feed(rx, pkts30)
        assert rx.finalize_frame(30, Modality.RGB).outcome == Outcome.CLEAN


class TestFinalizeP:
    def _prime(self, enc, rx, clip):
        _feed(rx, enc.packets(clip[0], Modality.RGB))
        rx.finalize_frame(0, Modality.RGB)

    def test_header_lost_is_lost_frame(self, clip):
        enc = _Encoder()
        rx = _rx()
        self._prime(enc, rx, clip)
        pkts = enc.packets(clip[1], Modality.RGB)
        headers = [i for i, p in enumerate(pkts) if p.shard_index == 0]
        assert len(headers) == 2             # duplicated P header
        _feed(rx, pkts, drop_indices=set(headers))
        out = rx.finalize_frame(1, Modality.RGB)
        assert out.outcome == Outcome.LOST_FRAME
        assert out.plane is None

    def test_one_header_copy_suffices(self, clip):
        enc = _Encoder()
        rx = _rx()
        self._prime(enc, rx, clip)
        pkts = enc.packets(clip[1], Modality.RGB)
        _feed(rx, pkts, drop_indices={0})    # first copy lost, second survives
        assert rx.finalize_frame(1, Modality.RGB).outcome == Outcome.CLEAN

    def test_partial_body_zero_fill(self, clip):
        enc = _Encoder()
        rx = _rx()
        self._prime(enc, rx, clip)
        pkts = enc.packets(clip[1], Modality.RGB)
        body = [i for i, p in enumerate(pkts) if p.shard_index != 0]
        assert len(body) >= 2
        _feed(rx, pkts, drop_indices={body[0]})
        out = rx.finalize_frame(1, Modality.RGB)
        assert out.outcome == Outcome.PARTIAL
        lo, hi = out.zero_fill_ranges[0]
        assert lo == 0 and hi == min(1024, pkts[body[0]].payload_len)
        assert out.mask is not None and out.mask.any
        assert out.recovered                 # baseline had a reference frame
        assert out.plane is not None

    def test_no_reference_is_lost_frame(self, clip):
        enc = _Encoder()
        _feed(_rx(), enc.packets(clip[0], Modality.RGB))   # advance encoder only
        rx = _rx()
        pkts = enc.packets(clip[1], Modality.RGB)
        _feed(rx, pkts)
        assert rx.finalize_frame(1, Modality.RGB).outcome == Outcome.LOST_FRAME

    def test_l3_only_partial_breaks_rest_of_gop(self, clip):
        enc = _Encoder(ProtectionPolicy(mode=ProtectionMode.L3_ONLY))
        rx = _rx(l7=False)
        self._prime(enc, rx, clip)
        pkts = enc.packets(clip[1], Modality.RGB)
        body = [i for i, p in enumerate(pkts) if p.shard_index != 0]
        _feed(rx, pkts, drop_indices={body[0]})
        assert rx.finalize_frame(1, Modality.RGB).outcome == Outcome.LOST_FRAME
        # fully-received successor still unusable: reference chain is broken
        pkts2 = enc.packets(clip[2], Modality.RGB)
        _feed(rx, pkts2)
        assert rx.finalize_frame(2, Modality.RGB).outcome == Outcome.LOST_FRAME


class TestDisplayClock:
    def _run_session(self, clip, rx, enc, drop_frame=None):
        for f in clip[:30]:
            for mod in Modality:
                pkts = enc.packets(f, mod)
                if f.frame_id != drop_frame:
                    _feed(rx, pkts)
            for mod in Modality:
                rx.finalize_frame(f.frame_id, mod)
            rx.display_tick(f.frame_id, f.frame_id * GOP.frame_interval_ms)
        rx.close_playback()

    def test_clean_session_has_no_freezes(self, clip):
        rx = _rx()
        self._run_session(clip, rx, _Encoder())
        assert rx.playback.freeze_log == []

    def test_lost_p_without_l7_freezes_rest_of_gop(self, clip):
        rx = _rx(l7=False)
        enc = _Encoder(ProtectionPolicy(mode=ProtectionMode.L3_ONLY))
        self._run_session(clip, rx, enc, drop_frame=5)
        assert len(rx.playback.freeze_log) == 1
        start, dur = rx.playback.freeze_log[0]
        assert start == pytest.approx(5 * GOP.frame_interval_ms)
        # frames 5..29 freeze: (30 - 5) intervals
        assert dur == pytest.approx(25 * GOP.frame_interval_ms)

    def test_lost_p_with_l7_single_frame_freeze(self, clip):
        rx = _rx()
        self._run_session(clip, rx, _Encoder(), drop_frame=5)
        assert len(rx.playback.freeze_log) == 1
        assert rx.playback.freeze_log[0][1] == \
            pytest.approx(GOP.frame_interval_ms)

    def test_partial_p_with_recovery_does_not_freeze(self, clip):
        enc = _Encoder()
        rx = _rx()
        for f in clip[:3]:
            for mod in Modality:
                pkts = enc.packets(f, mod)
                drops = set()
                if f.frame_id == 1 and mod == Modality.RGB:
                    body = [i for i, p in enumerate(pkts) if p.shard_index != 0]
                    drops = {body[0]}
                _feed(rx, pkts, drop_indices=drops)
            for mod in Modality:
                rx.finalize_frame(f.frame_id, mod)
            rx.display_tick(f.frame_id, f.frame_id * GOP.frame_interval_ms)
        rx.close_playback()
        assert rx.playback.freeze_log == []


class TestDecodeBudget:
    def test_budget_enforcement_flags_deadline_miss(self, clip):
        def slow_backend(req):
            import time
            from rgbdstream.recovery import recover_baseline
            time.sleep(0.05)
            return recover_baseline(req)

        enc = _Encoder()
        rx = _rx(backend=slow_backend, enforce_decode_budget=True)
        _feed(rx, enc.packets(clip[0], Modality.RGB))
        rx.finalize_frame(0, Modality.RGB)
        pkts = enc.packets(clip[1], Modality.RGB)
        body = [i for i, p in enumerate(pkts) if p.shard_index != 0]
        _feed(rx, pkts, drop_indices={body[0]})
        out = rx.finalize_frame(1, Modality.RGB)
        assert out.outcome == Outcome.LOST_FRAME
        assert out.deadline_miss
