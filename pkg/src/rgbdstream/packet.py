"""DESC-headed packetization and the bit-exact wire format.

Header layout (24 bytes, little-endian):

    magic(1)=0x52 version(1)=1 modality(1) frame_kind(1)
    frame_id(4) gop_id(4) shard_index(2) n_data(2) n_parity(2)
    encoded_frame_len(4) payload_len(2)

Every packet of a frame carries the full shard geometry and the encoded
frame length so the receiver can zero-fill missing ranges without any other
context.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

from .codec import EncodedFrame
from .fec import ShardPlan, ProtectionPolicy, rs_encode
from .frames import FrameKind, Modality

MAGIC = 0x52
VERSION = 1
HEADER_SIZE = 24
_FMT = "<BBBBIIHHHIH"

# default payload budgets per modality
PAYLOAD_LEN_RGB = 1024
PAYLOAD_LEN_DEPTH = 512


class PacketError(ValueError):
    pass


@dataclass(frozen=True)
class DescPacket:
    modality: Modality
    frame_kind: FrameKind
    frame_id: int
    gop_id: int
    shard_index: int
    n_data: int
    n_parity: int
    encoded_frame_len: int
    payload: bytes

    @property
    def payload_len(self) -> int:
        return len(self.payload)

    @property
    def wire_len(self) -> int:
        return HEADER_SIZE + len(self.payload)

    @property
    def is_parity(self) -> bool:
        return self.shard_index >= self.n_data


def serialize(p: DescPacket) -> bytes:
    if p.shard_index >= p.n_data + p.n_parity:
        raise PacketError("shard_index %d out of range" % p.shard_index)
    if len(p.payload) > 0xFFFF:
        raise PacketError("payload exceeds 65535 bytes")
    head = struct.pack(_FMT, MAGIC, VERSION, int(p.modality), int(p.frame_kind),
                       p.frame_id, p.gop_id, p.shard_index, p.n_data,
                       p.n_parity, p.encoded_frame_len, len(p.payload))
    return head + p.payload


def parse(data: bytes) -> DescPacket:
    if len(data) < HEADER_SIZE:
        raise PacketError("truncated header: %d bytes" % len(data))
    (magic, version, modality, kind, frame_id, gop_id, shard_index,
     n_data, n_parity, enc_len, payload_len) = struct.unpack_from(_FMT, data)
    if magic != MAGIC:
        raise PacketError("bad magic 0x%02x" % magic)
    if version != VERSION:
        raise PacketError("unsupported version %d" % version)
    if len(data) != HEADER_SIZE + payload_len:
        raise PacketError("payload truncated: have %d, declared %d"
                          % (len(data) - HEADER_SIZE, payload_len))
    if shard_index >= n_data + n_parity:
        raise PacketError("shard_index %d out of range" % shard_index)
    return DescPacket(Modality(modality), FrameKind(kind), frame_id, gop_id,
                      shard_index, n_data, n_parity, enc_len,
                      data[HEADER_SIZE:])


def packetize(enc: EncodedFrame, plan: ShardPlan,
              policy: ProtectionPolicy | None = None) -> list[DescPacket]:
    """Split an encoded frame into DESC packets per its shard plan.

    I-frames: shards 0..n-1 are the encoded bytes split at shard_len (plus
    FEC padding stripped down to the actual byte count on the last shard),
    n..n+r-1 carry parity.  P-frames: shard 0 is the codec header, emitted
    `header_copies` times; remaining shards carry body bytes.
    """
    if enc.encoded_len == 0:
        raise PacketError("zero-length encoded frame")
    if plan.n + plan.r > 0xFFFF:
        raise PacketError("frame needs more than 65535 shards")

    def mk(idx, payload):
        return DescPacket(modality=enc.modality, frame_kind=enc.kind,
                          frame_id=enc.frame_id, gop_id=enc.gop_id,
                          shard_index=idx, n_data=plan.n, n_parity=plan.r,
                          encoded_frame_len=enc.encoded_len, payload=payload)

    packets = []
    if enc.kind == FrameKind.I:
        data = enc.to_bytes()
        shards = rs_encode(data, plan.n, plan.r, plan.shard_len)
        for i in range(plan.n):
            lo = i * plan.shard_len
            packets.append(mk(i, data[lo:lo + plan.shard_len]))
        for i in range(plan.r):
            packets.append(mk(plan.n + i, shards.shards[plan.n + i]))
    else:
        for _ in range(plan.header_copies):
            packets.append(mk(0, enc.header))
        body = enc.payload
        for i in range(plan.n - 1):
            lo = i * plan.shard_len
            packets.append(mk(1 + i, body[lo:lo + plan.shard_len]))
    return packets


@dataclass(frozen=True)
class PacketSchedule:
    """Time-ordered (send_offset_ms, packet) pairs for one or more frames."""

    entries: tuple[tuple[float, DescPacket], ...]

    def __post_init__(self):
        offs = [t for t, _ in self.entries]
        if any(b < a for a, b in zip(offs, offs[1:])):
            raise PacketError("schedule offsets must be non-decreasing")

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)


def interleave(rgb: list[DescPacket], depth: list[DescPacket],
               frame_interval_ms: float, base_offset_ms: float = 0.0) -> PacketSchedule:
    """Merge the two modality packet lists into one paced schedule.

    Packets are merged proportionally by remaining byte share (Bresenham
    style), so the minority modality lands at positions that split the
    majority run into near-equal segments, and equal-size lists alternate
    strictly.  Slots are spread uniformly across the frame interval.
    """
    total = len(rgb) + len(depth)
    if total == 0:
        return PacketSchedule(())
    rgb_bytes = sum(p.wire_len for p in rgb)
    depth_bytes = sum(p.wire_len for p in depth)
    ri = di = 0
    sent_r = sent_d = 0
    order = []
    while ri < len(rgb) or di < len(depth):
        if ri >= len(rgb):
            take_rgb = False
        elif di >= len(depth):
            take_rgb = True
        else:
            # compare proportional progress (sent/total) if each modality
            # sent its next packet; take the one that stays furthest behind
            take_rgb = (sent_r + rgb[ri].wire_len) * depth_bytes <= \
                       (sent_d + depth[di].wire_len) * rgb_bytes
        if take_rgb:
            order.append(rgb[ri])
            sent_r += rgb[ri].wire_len
            ri += 1
        else:
            order.append(depth[di])
            sent_d += depth[di].wire_len
            di += 1
    step = frame_interval_ms / total
    entries = tuple((base_offset_ms + i * step, p) for i, p in enumerate(order))
    return PacketSchedule(entries)
