"""Deterministic block-delta reference codec.

I-frames store quantized raw blocks, P-frames store quantized deltas against
the previous *reconstructed* plane; blocks whose quantized delta is all zero
are skipped and recorded absent in the header bitmap.  Payloads are
run-length coded with runs forced to break at block boundaries, so the
header's per-block payload offsets let a receiver map missing byte ranges to
the exact set of corrupted blocks.

The decodability contract that the rest of the pipeline relies on: a P-frame
decodes without error from its header and declared encoded length alone,
even if every payload byte has been zero-filled.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .frames import FrameKind, GoPSpec, Modality

# run-length record: run length (1..255), zigzag value
_RLE_DTYPE = np.dtype([("run", "u1"), ("val", "<u2")])
_HDR_FMT = "<BBHHBBIH"  # kind, channels, width, height, block, quant, payload_len, n_present
_HDR_FIXED = struct.calcsize(_HDR_FMT)


class UndecodableError(ValueError):
    """Header is truncated or inconsistent; the frame cannot be decoded."""


@dataclass(frozen=True)
class CodecConfig:
    block: int = 16
    quant: int = 4
    gop: GoPSpec = field(default_factory=GoPSpec)

    def __post_init__(self):
        if self.quant < 1:
            raise ValueError("quant must be >= 1")
        if self.block < 1:
            raise ValueError("block must be >= 1")


@dataclass(frozen=True)
class EncodedFrame:
    frame_id: int
    gop_id: int
    kind: FrameKind
    modality: Modality
    header: bytes
    payload: bytes

    @property
    def encoded_len(self) -> int:
        return len(self.header) + len(self.payload)

    def to_bytes(self) -> bytes:
        return self.header + self.payload


@dataclass(frozen=True)
class CorruptionMask:
    """Per-block grid; True marks blocks whose payload fell in a zeroed range."""

    grid: np.ndarray  # bool, shape (height/block, width/block)

    def __post_init__(self):
        self.grid.setflags(write=False)

    @property
    def any(self) -> bool:
        return bool(self.grid.any())

    def to_pixels(self, block: int, channels: int = 1) -> np.ndarray:
        """Expand to a per-pixel boolean plane."""
        m = np.repeat(np.repeat(self.grid, block, axis=0), block, axis=1)
        if channels > 1:
            m = np.repeat(m[:, :, None], channels, axis=2)
        return m


def _blockify(plane: np.ndarray, block: int) -> np.ndarray:
    """Rearrange a plane into (n_blocks, block*block*channels) row-major blocks."""
    if plane.ndim == 2:
        plane = plane[:, :, None]
    h, w, c = plane.shape
    if h % block or w % block:
        raise ValueError("plane %dx%d not a multiple of block %d" % (w, h, block))
    hb, wb = h // block, w // block
    # channel-planar within each block so same-valued pixel runs survive RLE
    a = plane.reshape(hb, block, wb, block, c).transpose(0, 2, 4, 1, 3)
    return a.reshape(hb * wb, block * block * c)


def _unblockify(blocks: np.ndarray, block: int, h: int, w: int, c: int) -> np.ndarray:
    hb, wb = h // block, w // block
    a = blocks.reshape(hb, wb, c, block, block).transpose(0, 3, 1, 4, 2)
    out = a.reshape(h, w, c)
    return out[:, :, 0] if c == 1 else out


def _rle_encode(vals: np.ndarray, block_samples: int) -> tuple[bytes, np.ndarray]:
    """RLE a u16 sample stream, breaking runs at every block boundary.

    Returns the encoded bytes and the byte offset of each block's first run.
    """
    n = len(vals)
    n_blocks = n // block_samples
    if n == 0:
        return b"", np.zeros(0, dtype=np.int64)
    change = np.flatnonzero(vals[1:] != vals[:-1]) + 1
    starts = np.union1d(np.concatenate(([0], change)),
                        np.arange(0, n, block_samples))
    lengths = np.diff(np.concatenate((starts, [n])))
    # split runs longer than 255 into chunks
    nchunks = (lengths + 254) // 255
    total = int(nchunks.sum())
    run_vals = np.repeat(vals[starts], nchunks)
    run_lens = np.full(total, 255, dtype=np.int64)
    last = np.cumsum(nchunks) - 1
    run_lens[last] = lengths - (nchunks - 1) * 255
    rec = np.empty(total, dtype=_RLE_DTYPE)
    rec["run"] = run_lens
    rec["val"] = run_vals
    runs_per_block = np.bincount(np.repeat(starts // block_samples, nchunks),
                                 minlength=n_blocks)
    offsets = np.concatenate(([0], np.cumsum(runs_per_block[:-1]))) * _RLE_DTYPE.itemsize
    return rec.tobytes(), offsets


def _rle_decode(buf: bytes) -> np.ndarray:
    if len(buf) % _RLE_DTYPE.itemsize != 0:
        raise UndecodableError("payload range is not whole RLE records")
    rec = np.frombuffer(buf, dtype=_RLE_DTYPE)
    return np.repeat(rec["val"].astype(np.uint16), rec["run"])


def _zigzag(v: np.ndarray) -> np.ndarray:
    v = v.astype(np.int16)
    return ((v << 1) ^ (v >> 15)).astype(np.uint16)


def _unzigzag(u: np.ndarray) -> np.ndarray:
    u = u.astype(np.uint16)
    return ((u >> 1).astype(np.int16)) ^ (-(u & 1).astype(np.int16))


def _pack_header(kind: FrameKind, channels: int, h: int, w: int, cfg: CodecConfig,
                 payload_len: int, present: np.ndarray, offsets: np.ndarray) -> bytes:
    bitmap = np.packbits(present).tobytes()
    head = struct.pack(_HDR_FMT, int(kind), channels, w, h, cfg.block, cfg.quant,
                       payload_len, int(present.sum()))
    return head + bitmap + offsets.astype("<u4").tobytes()


@dataclass(frozen=True)
class _Header:
    kind: FrameKind
    channels: int
    width: int
    height: int
    block: int
    quant: int
    payload_len: int
    present: np.ndarray   # bool per block
    offsets: np.ndarray   # byte offset per present block
    header_len: int

    def block_ranges(self) -> np.ndarray:
        """(n_present, 2) start/end payload byte ranges, in block order."""
        if len(self.offsets) == 0:
            return np.zeros((0, 2), dtype=np.int64)
        ends = np.concatenate((self.offsets[1:], [self.payload_len]))
        return np.stack((self.offsets, ends), axis=1)


def parse_header(data: bytes) -> _Header:
    """Parse a codec header from the front of an encoded byte string."""
    if len(data) < _HDR_FIXED:
        raise UndecodableError("header truncated")
    kind, channels, w, h, block, quant, payload_len, n_present = \
        struct.unpack_from(_HDR_FMT, data)
    if block == 0 or w % block or h % block:
        raise UndecodableError("inconsistent geometry in header")
    n_blocks = (w // block) * (h // block)
    bitmap_len = (n_blocks + 7) // 8
    hdr_len = _HDR_FIXED + bitmap_len + 4 * n_present
    if len(data) < hdr_len:
        raise UndecodableError("header truncated")
    present = np.unpackbits(
        np.frombuffer(data, dtype=np.uint8, count=bitmap_len, offset=_HDR_FIXED),
        count=n_blocks).astype(bool)
    if int(present.sum()) != n_present:
        raise UndecodableError("bitmap disagrees with present count")
    offsets = np.frombuffer(data, dtype="<u4", count=n_present,
                            offset=_HDR_FIXED + bitmap_len).astype(np.int64)
    return _Header(FrameKind(kind), channels, w, h, block, quant, payload_len,
                   present, offsets, hdr_len)


def _geometry(plane: np.ndarray, cfg: CodecConfig) -> tuple[int, int, int]:
    h, w = plane.shape[:2]
    c = 1 if plane.ndim == 2 else plane.shape[2]
    if h % cfg.block or w % cfg.block:
        raise ValueError("plane %dx%d not a multiple of block %d" % (w, h, cfg.block))
    return h, w, c


def encode_i(plane: np.ndarray, cfg: CodecConfig, *, frame_id: int = 0,
             gop_id: int = 0, modality: Modality = Modality.RGB) -> EncodedFrame:
    """Intra-code a plane: quantized raw samples, RLE per block."""
    h, w, c = _geometry(plane, cfg)
    q = ((plane.astype(np.uint16) + cfg.quant // 2) // cfg.quant)
    vals = _blockify(q, cfg.block).reshape(-1)
    bs = cfg.block * cfg.block * c
    payload, offsets = _rle_encode(vals, bs)
    present = np.ones(len(vals) // bs, dtype=bool)
    header = _pack_header(FrameKind.I, c, h, w, cfg, len(payload), present, offsets)
    return EncodedFrame(frame_id, gop_id, FrameKind.I, modality, header, payload)


def encode_p(plane: np.ndarray, reference: np.ndarray, cfg: CodecConfig, *,
             frame_id: int = 0, gop_id: int = 0,
             modality: Modality = Modality.RGB) -> EncodedFrame:
    """Inter-code a plane as quantized per-block deltas against `reference`.

    `reference` must be the decoder-side reconstruction of the previous frame,
    otherwise sender and receiver drift apart.
    """
    h, w, c = _geometry(plane, cfg)
    if reference.shape != plane.shape:
        raise ValueError("reference shape %r != plane shape %r"
                         % (reference.shape, plane.shape))
    d = plane.astype(np.int32) - reference.astype(np.int32)
    # deadzone quantizer: residuals below one step encode as zero, so the
    # quantization error left by the I-frame does not ping-pong forever
    qd = np.sign(d) * (np.abs(d) // cfg.quant)
    bs = cfg.block * cfg.block * c
    blocks = _blockify(qd.astype(np.int16), cfg.block)
    present = (blocks != 0).any(axis=1)
    vals = _zigzag(blocks[present].reshape(-1))
    payload, offsets = _rle_encode(vals, bs)
    header = _pack_header(FrameKind.P, c, h, w, cfg, len(payload), present, offsets)
    return EncodedFrame(frame_id, gop_id, FrameKind.P, modality, header, payload)


def _corrupted_blocks(ranges: np.ndarray, zero_fill_ranges) -> np.ndarray:
    """Flag present blocks whose payload byte range intersects a zeroed range."""
    flagged = np.zeros(len(ranges), dtype=bool)
    for z0, z1 in zero_fill_ranges:
        if z1 <= z0:
            continue
        flagged |= (ranges[:, 0] < z1) & (ranges[:, 1] > z0)
    return flagged


def decode(enc: EncodedFrame, reference: np.ndarray | None = None,
           zero_fill_ranges=()) -> tuple[np.ndarray, CorruptionMask]:
    """Decode an encoded frame, tolerating zero-filled payload ranges.

    Blocks whose payload intersects a zero-filled range decode with zero
    delta (P) or zero content (I) and are flagged in the returned mask.
    """
    hdr = parse_header(enc.header)
    if hdr.kind == FrameKind.P and reference is None:
        raise ValueError("P-frame decode requires a reference plane")
    block, c = hdr.block, hdr.channels
    h, w = hdr.height, hdr.width
    bs = block * block * c
    n_blocks = (h // block) * (w // block)
    payload = enc.payload
    if len(payload) < hdr.payload_len:
        # receiver contract: missing tail bytes behave as zero-filled
        zero_fill_ranges = list(zero_fill_ranges) + [(len(payload), hdr.payload_len)]
        payload = payload + b"\x00" * (hdr.payload_len - len(payload))

    ranges = hdr.block_ranges()
    flagged = _corrupted_blocks(ranges, zero_fill_ranges)

    present_ids = np.flatnonzero(hdr.present)
    clean = ~flagged
    clean_buf = b"".join(payload[int(s):int(e)] for s, e in ranges[clean])
    try:
        clean_vals = _rle_decode(clean_buf)
    except UndecodableError:
        raise
    if len(clean_vals) != int(clean.sum()) * bs:
        raise UndecodableError("payload sample count disagrees with header")

    # reconstruct sparsely: only present clean blocks are touched, so a
    # P-frame's cost scales with its changed area rather than the plane size
    hb, wb = h // block, w // block
    clean_ids = present_ids[clean]
    if hdr.kind == FrameKind.I:
        plane3 = np.zeros((h, w, c), dtype=np.uint8)
        patch = np.clip(clean_vals.astype(np.int16) * np.int16(hdr.quant),
                        0, 255).astype(np.uint8)
    else:
        base = reference if reference.ndim == 3 else reference[:, :, None]
        plane3 = base.copy()
        deltas = _unzigzag(clean_vals).reshape(-1, c, block, block) \
            * np.int16(hdr.quant)
        view = plane3.reshape(hb, block, wb, block, c)
        by, bx = np.divmod(clean_ids, wb)
        ref_sel = view[by, :, bx, :, :].astype(np.int16)
        patch = np.clip(ref_sel + deltas.transpose(0, 2, 3, 1),
                        0, 255).astype(np.uint8)
    view = plane3.reshape(hb, block, wb, block, c)
    by, bx = np.divmod(clean_ids, wb)
    # payload samples are channel-planar per block
    view[by, :, bx, :, :] = patch.reshape(-1, c, block, block).transpose(0, 2, 3, 1) \
        if hdr.kind == FrameKind.I else patch
    plane = plane3[:, :, 0] if c == 1 else plane3

    grid = np.zeros(n_blocks, dtype=bool)
    grid[present_ids[flagged]] = True
    mask = CorruptionMask(grid.reshape(h // block, w // block))
    return plane, mask


def decode_bytes(data: bytes, reference: np.ndarray | None = None,
                 zero_fill_ranges=(), *, frame_id: int = 0, gop_id: int = 0,
                 modality: Modality = Modality.RGB) -> tuple[np.ndarray, CorruptionMask]:
    """Decode from a reassembled header+payload byte string.

    `zero_fill_ranges` are byte ranges relative to the whole encoded frame;
    ranges inside the header make the frame undecodable.
    """
    hdr = parse_header(data)
    payload_ranges = []
    for z0, z1 in zero_fill_ranges:
        if z0 < hdr.header_len and z1 > 0 and z1 > z0:
            raise UndecodableError("zero-filled range overlaps codec header")
        payload_ranges.append((z0 - hdr.header_len, z1 - hdr.header_len))
    enc = EncodedFrame(frame_id, gop_id, hdr.kind, modality,
                       data[:hdr.header_len], data[hdr.header_len:])
    return decode(enc, reference, payload_ranges)
