"""Deadline-driven frame assembly, loss classification, and display clocking.

Outcomes at each frame's decode deadline:
  * I-frame: reconstructible (all data shards, or any n of n+r after FEC)
    decodes clean, otherwise the whole remaining GoP is lost.
  * P-frame: header present plus full body decodes clean; header present with
    missing body shards zero-fills the gaps and decodes with a corruption
    mask; header absent (all copies) drops the frame.

When application-layer recovery is disabled the receiver mirrors default
codec behavior: a lost or partial P-frame invalidates the remainder of its
GoP, freezing playback until the next I-frame.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import codec
from .codec import CodecConfig, CorruptionMask, EncodedFrame
from .fec import ShardSet, rs_reconstruct, UnrecoverableError
from .frames import FrameKind, GoPSpec, Modality, gop_position
from .metrics import Outcome
from .packet import DescPacket
from .recovery import (RecoveryRequest, RecoveryResponse, ReferenceRing,
                       recover_baseline)


class AnchorError(RuntimeError):
    """Session anchor t0 is not established yet."""


@dataclass
class FrameAssembly:
    """Reassembly state for one (frame_id, modality)."""

    frame_id: int
    modality: Modality
    kind: FrameKind
    n_data: int
    n_parity: int
    encoded_frame_len: int
    first_packet_ts: float
    shards: dict[int, bytes] = field(default_factory=dict)
    complete_ts: float | None = None
    finalized: bool = False

    @property
    def reconstructible(self) -> bool:
        if self.kind == FrameKind.I:
            return len(self.shards) >= self.n_data
        return all(i in self.shards for i in range(self.n_data))



@dataclass
class FrameOutcome:
    frame_id: int
    modality: Modality
    outcome: Outcome
    plane: np.ndarray | None = None
    mask: CorruptionMask | None = None
    zero_fill_ranges: list[tuple[int, int]] = field(default_factory=list)
    recovered: bool = False
    decode_ms: float = 0.0
    recover_ms: float = 0.0
    deadline_miss: bool = False
    complete_ts: float | None = None

    @property
    def displayable(self) -> bool:
        return self.plane is not None


@dataclass
class PlaybackState:
    last_rgb: np.ndarray | None = None
    last_depth: np.ndarray | None = None
    freeze_started_ts: float | None = None
    frozen_ticks: int = 0
    freeze_log: list[tuple[float, float]] = field(default_factory=list)


class Receiver:
    """Per-session receive pipeline: ingest -> finalize/decode+recover -> display."""

    def __init__(self, gop: GoPSpec, cfg: CodecConfig, *,
                 payload_len: dict[Modality, int] | None = None,
                 l7_enabled: bool = True, backend=None, ring_k: int = 5,
                 recovery_budget_ms: float | None = None,
                 enforce_decode_budget: bool = False):
        self.gop = gop
        self.cfg = cfg
        # shard byte budget per modality, negotiated at session start
        self.payload_len = payload_len or {Modality.RGB: 1024, Modality.DEPTH: 512}
        self.l7_enabled = l7_enabled
        self.backend = backend          # callable(RecoveryRequest)->RecoveryResponse
        self.recovery_budget_ms = recovery_budget_ms or gop.frame_interval_ms
        self.enforce_decode_budget = enforce_decode_budget
        self.t0: float | None = None
        self.assemblies: dict[tuple[int, Modality], FrameAssembly] = {}
        self.outcomes: dict[tuple[int, Modality], FrameOutcome] = {}
        self.refs = {m: None for m in Modality}          # decoder reference plane
        self.rings = {m: ReferenceRing(ring_k) for m in Modality}
        self.lost_gop = {m: None for m in Modality}      # gop_id under GoP collapse
        self.broken_gop = {m: None for m in Modality}    # l3-only P-loss propagation
        self.playback = PlaybackState()

    # -- clocking ------------------------------------------------------------

    def set_anchor(self, t0: float) -> None:
        if self.t0 is not None:
            raise AnchorError("t0 already set")
        self.t0 = t0

    def deadline_for(self, frame_id: int) -> float:
        if self.t0 is None:
            raise AnchorError("t0 not established")
        return self.t0 + frame_id * 1000.0 / self.gop.fps

    # -- packet ingest -------------------------------------------------------

    def ingest_packet(self, pkt: DescPacket, now: float) -> FrameOutcome | None:
        """Add a packet to its frame assembly.

        Returns a completion event when the frame becomes reconstructible
        (forwarded immediately rather than waiting for the deadline).
        Packets for finalized frames are discarded: late equals lost.
        """
        key = (pkt.frame_id, pkt.modality)
        if key in self.outcomes:
            return None
        asm = self.assemblies.get(key)
        if asm is None:
            asm = FrameAssembly(pkt.frame_id, pkt.modality, pkt.frame_kind,
                                pkt.n_data, pkt.n_parity, pkt.encoded_frame_len,
                                first_packet_ts=now)
            self.assemblies[key] = asm
        if asm.finalized or pkt.shard_index in asm.shards:
            return None   # duplicate header copy or repeated shard
        asm.shards[pkt.shard_index] = pkt.payload
        if asm.complete_ts is None and asm.reconstructible:
            asm.complete_ts = now
            return FrameOutcome(pkt.frame_id, pkt.modality, Outcome.CLEAN,
                                complete_ts=now)
        return None

    # -- finalization --------------------------------------------------------

    def finalize_frame(self, frame_id: int, modality: Modality,
                       now: float | None = None) -> FrameOutcome:
        key = (frame_id, modality)
        if key in self.outcomes:
            return self.outcomes[key]
        gop_id, kind = gop_position(frame_id, self.gop)
        asm = self.assemblies.get(key)
        if asm is not None:
            asm.finalized = True

        if self.lost_gop[modality] == gop_id and kind == FrameKind.P:
            out = FrameOutcome(frame_id, modality, Outcome.LOST_GOP)
        elif kind == FrameKind.I:
            out = self._finalize_i(frame_id, modality, gop_id, asm)
        else:
            out = self._finalize_p(frame_id, modality, gop_id, asm)

        if (self.enforce_decode_budget and out.displayable
                and out.decode_ms + out.recover_ms > self.gop.frame_interval_ms):
            out = FrameOutcome(frame_id, modality, Outcome.LOST_FRAME,
                               deadline_miss=True, decode_ms=out.decode_ms,
                               recover_ms=out.recover_ms)
        self.outcomes[key] = out
        # shard payloads are dead weight once the frame is classified
        self.assemblies.pop(key, None)
        return out

    def _finalize_i(self, frame_id, modality, gop_id, asm) -> FrameOutcome:
        if asm is None or not asm.reconstructible:
            self.lost_gop[modality] = gop_id
            return FrameOutcome(frame_id, modality, Outcome.LOST_GOP)
        t0 = time.perf_counter()
        # the plan may have grown shards past the configured budget to keep
        # the RS shard count within GF(2^8); any full shard reveals the size
        shard_len = max(self.payload_len[modality],
                        *(len(b) for b in asm.shards.values()))
        present = [i in asm.shards for i in range(asm.n_data + asm.n_parity)]
        shards = [asm.shards.get(i) and asm.shards[i].ljust(shard_len, b"\x00")
                  for i in range(asm.n_data + asm.n_parity)]
        sset = ShardSet(n=asm.n_data, r=asm.n_parity, shard_len=shard_len,
                        data_len=asm.encoded_frame_len, shards=shards,
                        present=present)
        try:
            data = rs_reconstruct(sset)
            plane, mask = codec.decode_bytes(data, frame_id=frame_id,
                                             gop_id=gop_id, modality=modality)
        except (UnrecoverableError, codec.UndecodableError):
            self.lost_gop[modality] = gop_id
            return FrameOutcome(frame_id, modality, Outcome.LOST_GOP)
        decode_ms = (time.perf_counter() - t0) * 1000.0
        self.refs[modality] = plane
        self.lost_gop[modality] = None
        self.broken_gop[modality] = None
        self.rings[modality].push(plane)
        return FrameOutcome(frame_id, modality, Outcome.CLEAN, plane=plane,
                            mask=mask, decode_ms=decode_ms,
                            complete_ts=asm.complete_ts)

    def _finalize_p(self, frame_id, modality, gop_id, asm) -> FrameOutcome:
        if not self.l7_enabled and self.broken_gop[modality] == gop_id:
            # default codec behavior: reference chain broken for rest of GoP
            return FrameOutcome(frame_id, modality, Outcome.LOST_FRAME)
        if asm is None or not asm.shards or 0 not in asm.shards:
            # header lost in every copy, or nothing received at all
            if not self.l7_enabled:
                self.broken_gop[modality] = gop_id
            return FrameOutcome(frame_id, modality, Outcome.LOST_FRAME)
        reference = self.refs[modality]
        if reference is None:
            return FrameOutcome(frame_id, modality, Outcome.LOST_FRAME)

        header = asm.shards[0]
        body_len = asm.encoded_frame_len - len(header)
        shard_len = self.payload_len[modality]
        zero_fill: list[tuple[int, int]] = []
        chunks = []
        for i in range(1, asm.n_data):
            lo = (i - 1) * shard_len
            hi = min(lo + shard_len, body_len)
            if i in asm.shards:
                chunks.append(asm.shards[i])
            else:
                chunks.append(b"\x00" * (hi - lo))
                zero_fill.append((lo, hi))
        body = b"".join(chunks)

        if zero_fill and not self.l7_enabled:
            self.broken_gop[modality] = gop_id
            return FrameOutcome(frame_id, modality, Outcome.LOST_FRAME)

        enc = EncodedFrame(frame_id, gop_id, FrameKind.P, modality, header, body)
        t0 = time.perf_counter()
        try:
            plane, mask = codec.decode(enc, reference, zero_fill)
        except codec.UndecodableError:
            if not self.l7_enabled:
                self.broken_gop[modality] = gop_id
            return FrameOutcome(frame_id, modality, Outcome.LOST_FRAME)
        decode_ms = (time.perf_counter() - t0) * 1000.0
        self.refs[modality] = plane

        if not zero_fill:
            self.rings[modality].push(plane)
            return FrameOutcome(frame_id, modality, Outcome.CLEAN, plane=plane,
                                mask=mask, decode_ms=decode_ms,
                                complete_ts=asm.complete_ts)

        req = RecoveryRequest(frame_id, modality, plane, mask,
                              self.rings[modality].snapshot())
        backend = self.backend or recover_baseline
        t1 = time.perf_counter()
        resp: RecoveryResponse = backend(req)
        recover_ms = (time.perf_counter() - t1) * 1000.0
        out_plane = resp.plane
        # recovered frames re-enter the decoder reference and the ring
        self.refs[modality] = out_plane
        self.rings[modality].push(out_plane)
        return FrameOutcome(frame_id, modality, Outcome.PARTIAL, plane=out_plane,
                            mask=mask, zero_fill_ranges=zero_fill,
                            recovered=not resp.fallback, decode_ms=decode_ms,
                            recover_ms=recover_ms, deadline_miss=resp.timeout,
                            complete_ts=asm.complete_ts)

    # -- display clock -------------------------------------------------------

    def display_tick(self, frame_id: int, now: float) -> bool:
        """Advance the display clock for `frame_id`; True if fresh content shown.

        Both modalities must have a displayable plane; otherwise the last
        displayed pair is repeated and the freeze accumulates.
        """
        rgb = self.outcomes.get((frame_id, Modality.RGB))
        depth = self.outcomes.get((frame_id, Modality.DEPTH))
        pb = self.playback
        interval = self.gop.frame_interval_ms
        # release the previous frame's decoded planes; without this a long
        # session pins one plane per finalized frame
        for mod in Modality:
            prev = self.outcomes.get((frame_id - 1, mod))
            if prev is not None:
                prev.plane = None
        if rgb is not None and depth is not None and \
                rgb.displayable and depth.displayable:
            pb.last_rgb = rgb.plane
            pb.last_depth = depth.plane
            if pb.freeze_started_ts is not None:
                pb.freeze_log.append((pb.freeze_started_ts,
                                      pb.frozen_ticks * interval))
                pb.freeze_started_ts = None
                pb.frozen_ticks = 0
            return True
        if pb.freeze_started_ts is None:
            pb.freeze_started_ts = now
        pb.frozen_ticks += 1
        return False

    def close_playback(self) -> None:
        """Flush a trailing open freeze at end of session."""
        pb = self.playback
        if pb.freeze_started_ts is not None:
            pb.freeze_log.append((pb.freeze_started_ts,
                                  pb.frozen_ticks * self.gop.frame_interval_ms))
            pb.freeze_started_ts = None
            pb.frozen_ticks = 0
