"""End-to-end simulated sessions: sender -> channel -> receiver -> report.

The sender encodes and packetizes frames GoP by GoP so the reactive-FEC
baseline can adjust its redundancy from the loss observed in the previous
GoP.  The receiver is driven in deadline order off the session anchor t0,
which is set when frame 0 (delivered losslessly) is fully received.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import codec, metrics
from .channel import ChannelConfig, ChannelSim, Delivery
from .codec import CodecConfig
from .fec import ProtectionMode, ProtectionPolicy, plan_protection
from .frames import FrameKind, GoPSpec, Modality, RGBDFrame, gop_position
from .metrics import FrameRecord, FreezeEvent, Outcome, SessionReport
from .packet import (PAYLOAD_LEN_DEPTH, PAYLOAD_LEN_RGB, interleave, packetize)
from .receiver import Receiver


@dataclass
class SessionConfig:
    codec: CodecConfig = field(default_factory=CodecConfig)
    policy: ProtectionPolicy = field(default_factory=ProtectionPolicy)
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    payload_len: dict = field(default_factory=lambda: {
        Modality.RGB: PAYLOAD_LEN_RGB, Modality.DEPTH: PAYLOAD_LEN_DEPTH})
    seed: int = 0
    ring_k: int = 5
    enforce_decode_budget: bool = False

    @property
    def mode(self) -> ProtectionMode:
        return self.policy.mode


def _encode_frame(plane, ref, kind, cfg, frame_id, gop_id, modality):
    if kind == FrameKind.I:
        enc = codec.encode_i(plane, cfg, frame_id=frame_id, gop_id=gop_id,
                             modality=modality)
        recon, _ = codec.decode(enc)
    else:
        enc = codec.encode_p(plane, ref, cfg, frame_id=frame_id, gop_id=gop_id,
                             modality=modality)
        recon, _ = codec.decode(enc, ref)
    return enc, recon


def run_session(frames: list[RGBDFrame], config: SessionConfig,
                backend=None, outcome_log=None,
                frame_sink=None) -> SessionReport:
    """Run one simulated streaming session and return its report."""
    if not frames:
        return SessionReport(mode=config.mode.value, seed=config.seed,
                             config=_config_echo(config))
    report = SessionReport(mode=config.mode.value, seed=config.seed,
                           config=_config_echo(config))
    chan = ChannelSim(config.channel, seed=config.seed)
    arrivals: dict[tuple[int, Modality], list[Delivery]] = {}
    for d in send_session(frames, config, chan, report):
        if not d.dropped:
            arrivals.setdefault((d.packet.frame_id, d.packet.modality),
                                []).append(d)
    playout(frames, config, arrivals, report, backend=backend,
            outcome_log=outcome_log, frame_sink=frame_sink)
    return report


def send_session(frames, config: SessionConfig, chan: ChannelSim,
                 report: SessionReport):
    """Encode, protect, packetize and transmit every frame; yields deliveries.

    Runs one GoP at a time so the reactive baseline can feed the loss it
    observed in the previous GoP back into the next one's parity budget.
    """
    gop = config.codec.gop
    interval = gop.frame_interval_ms
    sender_refs = {m: None for m in Modality}
    observed_loss = 0.0
    for g_start in range(0, len(frames), gop.gop_len):
        gop_frames = frames[g_start:g_start + gop.gop_len]
        sent = dropped = 0
        for frame in gop_frames:
            fid = frame.frame_id
            gop_id, kind = gop_position(fid, gop)
            per_mod = {}
            for mod in Modality:
                plane = frame.plane(mod)
                enc, recon = _encode_frame(plane, sender_refs[mod], kind,
                                           config.codec, fid, gop_id, mod)
                sender_refs[mod] = recon
                plan = plan_protection(kind, enc.encoded_len, config.policy,
                                       config.payload_len[mod],
                                       header_len=len(enc.header),
                                       reactive_observed_loss=observed_loss)
                per_mod[mod] = packetize(enc, plan, config.policy)
                report.bytes_data += enc.encoded_len
                report.bytes_parity += plan.r * plan.shard_len
                report.bytes_dup += (plan.header_copies - 1) * len(enc.header)
            schedule = interleave(per_mod[Modality.RGB], per_mod[Modality.DEPTH],
                                  interval, base_offset_ms=fid * interval)
            for d in chan.send(schedule):
                sent += 1
                if d.dropped:
                    dropped += 1
                yield d
        observed_loss = dropped / sent if sent else 0.0


def build_schedule(frames, config: SessionConfig, report: SessionReport):
    """Packetize all frames into one schedule without a simulated channel
    (used by the live transport).  Reactive feedback is unavailable here, so
    the reactive mode plans with zero observed loss."""
    gop = config.codec.gop
    interval = gop.frame_interval_ms
    sender_refs = {m: None for m in Modality}
    schedule = []
    for frame in frames:
        fid = frame.frame_id
        gop_id, kind = gop_position(fid, gop)
        per_mod = {}
        for mod in Modality:
            enc, recon = _encode_frame(frame.plane(mod), sender_refs[mod], kind,
                                       config.codec, fid, gop_id, mod)
            sender_refs[mod] = recon
            plan = plan_protection(kind, enc.encoded_len, config.policy,
                                   config.payload_len[mod],
                                   header_len=len(enc.header),
                                   reactive_observed_loss=0.0)
            per_mod[mod] = packetize(enc, plan, config.policy)
            report.bytes_data += enc.encoded_len
            report.bytes_parity += plan.r * plan.shard_len
            report.bytes_dup += (plan.header_copies - 1) * len(enc.header)
        schedule.extend(interleave(per_mod[Modality.RGB], per_mod[Modality.DEPTH],
                                   interval, base_offset_ms=fid * interval))
    return schedule


def playout(frames, config: SessionConfig,
            arrivals: dict[tuple[int, Modality], list[Delivery]],
            report: SessionReport, backend=None, outcome_log=None,
            frame_sink=None) -> Receiver:
    """Drive the receiver over recorded arrivals in deadline order."""
    gop = config.codec.gop
    interval = gop.frame_interval_ms
    receiver = Receiver(gop, config.codec, payload_len=config.payload_len,
                        l7_enabled=config.mode.l7_enabled, backend=backend,
                        ring_k=config.ring_k,
                        enforce_decode_budget=config.enforce_decode_budget)

    # anchor: frame 0 is delivered losslessly; t0 is its full-receipt time
    # plus one frame interval of jitter budget.  The sender paces a frame's
    # packets across its whole capture interval, so a frame with more
    # packets than frame 0 transmits its last shard at a later
    # intra-interval offset; without the slack that shard would always
    # classify as late even on a lossless channel.
    f0 = [d for m in Modality for d in arrivals.get((0, m), [])]
    if not f0:
        raise RuntimeError("frame 0 was not delivered; cannot anchor session")
    receiver.set_anchor(max(d.arrival_ts for d in f0) + interval)

    log_lines = []
    for frame in frames:
        fid = frame.frame_id
        deadline = receiver.deadline_for(fid)
        for mod in Modality:
            for d in sorted(arrivals.get((fid, mod), ()),
                            key=lambda d: d.arrival_ts):
                if d.arrival_ts <= deadline:   # late packets are lost
                    receiver.ingest_packet(d.packet, d.arrival_ts)
            out = receiver.finalize_frame(fid, mod, deadline)
            if out.deadline_miss:
                report.deadline_misses += 1
            log_lines.append({
                "frame_id": fid, "modality": mod.name.lower(),
                "outcome": out.outcome.value,
                "decode_ms": round(out.decode_ms, 3),
                "recover_ms": round(out.recover_ms, 3),
                "deadline_miss": out.deadline_miss,
            })
        receiver.display_tick(fid, deadline + interval)
        _record_frame(report, receiver, frame, frame_sink)
    receiver.close_playback()
    report.freeze_log = [FreezeEvent(start_ts=s, duration_ms=d)
                         for s, d in receiver.playback.freeze_log]

    if outcome_log is not None:
        with open(outcome_log, "w") as f:
            for line in log_lines:
                f.write(json.dumps(line) + "\n")
    return receiver


def _record_frame(report, receiver, frame, frame_sink=None):
    pb = receiver.playback
    for mod in Modality:
        out = receiver.outcomes[(frame.frame_id, mod)]
        shown = pb.last_rgb if mod == Modality.RGB else pb.last_depth
        truth = frame.plane(mod)
        s = p = None
        if shown is not None and shown.shape == truth.shape:
            s = metrics.ssim(shown, truth)
            p = metrics.psnr(shown, truth)
        report.records.append(FrameRecord(
            frame_id=frame.frame_id, modality=mod.name.lower(),
            outcome=out.outcome, ssim=s, psnr=p, recovered=out.recovered))
        if frame_sink is not None:
            frame_sink(frame.frame_id, mod, out, shown)


def _config_echo(config: SessionConfig) -> dict:
    return {
        "codec": {"block": config.codec.block, "quant": config.codec.quant,
                  "gop_len": config.codec.gop.gop_len, "fps": config.codec.gop.fps},
        "policy": {"mode": config.policy.mode.value,
                   "i_parity_ratio": config.policy.i_parity_ratio,
                   "p_header_copies": config.policy.p_header_copies},
        "channel": {"prop_delay_ms": config.channel.prop_delay_ms,
                    "queue_bytes": config.channel.queue_bytes,
                    "bandwidth_kbps": config.channel.bandwidth_kbps,
                    "trace": config.channel.trace is not None,
                    "ge": config.channel.ge is not None},
        "payload_len": {m.name.lower(): v for m, v in config.payload_len.items()},
        "ring_k": config.ring_k,
    }


def run_sweep(frames, config: SessionConfig, modes, backend_factory=None):
    """Run one session per mode with shared seed/channel; returns
    {mode: SessionReport}."""
    out = {}
    for mode in modes:
        mode = ProtectionMode(mode)
        cfg = SessionConfig(
            codec=config.codec,
            policy=ProtectionPolicy(config.policy.i_parity_ratio,
                                    config.policy.p_header_copies, mode),
            channel=config.channel, payload_len=config.payload_len,
            seed=config.seed, ring_k=config.ring_k,
            enforce_decode_budget=config.enforce_decode_budget)
        backend = backend_factory() if backend_factory else None
        out[mode.value] = run_session(frames, cfg, backend=backend)
    return out
