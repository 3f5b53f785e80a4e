"""External codec hook: drive an out-of-process codec over stdin/stdout.

Any codec honoring the same loss semantics (header + encoded length keep a
P-frame decodable; missing payload ranges decode to stale blocks plus a
corruption mask) can be plugged in behind this byte protocol.

All integers little-endian; every message is `u32 length | body`, the
length counting the body only.

  encode request:  u8 op=1 | u8 kind | u8 channels | u16 w | u16 h
                   | u8 quant | u8 block | plane | [reference plane if P]
  encode response: u8 op=1 | u16 header_len | header | payload
  decode request:  u8 op=2 | u8 kind | u8 channels | u16 w | u16 h
                   | u16 n_ranges | (u32 start, u32 end)*n | u32 enc_len
                   | encoded bytes | [reference plane if P]
  decode response: u8 op=2 | plane | mask bitset (row-major block grid)

The bundled `serve_reference` loop exposes the built-in codec through this
protocol, so the hook has a working reference peer for integration tests.
"""

from __future__ import annotations

import struct
import subprocess
import sys

import numpy as np

from . import codec as _codec
from .codec import CodecConfig, CorruptionMask, EncodedFrame
from .frames import FrameKind, Modality

OP_ENCODE = 1
OP_DECODE = 2


class ExternalCodecError(RuntimeError):
    pass


def _write_msg(stream, body: bytes) -> None:
    stream.write(struct.pack("<I", len(body)) + body)
    stream.flush()


def _read_msg(stream) -> bytes:
    head = stream.read(4)
    if len(head) < 4:
        return b""
    (n,) = struct.unpack("<I", head)
    body = stream.read(n)
    if len(body) != n:
        raise ExternalCodecError("short read from codec process")
    return body


def _plane_bytes(w: int, h: int, channels: int) -> int:
    return w * h * channels


class ExternalCodec:
    """Client for an external codec subprocess."""

    def __init__(self, argv: list[str]):
        self.proc = subprocess.Popen(argv, stdin=subprocess.PIPE,
                                     stdout=subprocess.PIPE)

    def close(self) -> None:
        self.proc.stdin.close()
        self.proc.wait(timeout=5)

    def encode(self, kind: FrameKind, plane: np.ndarray,
               reference: np.ndarray | None, cfg: CodecConfig, *,
               frame_id: int = 0, gop_id: int = 0,
               modality: Modality = Modality.RGB) -> EncodedFrame:
        h, w = plane.shape[:2]
        c = 1 if plane.ndim == 2 else plane.shape[2]
        body = struct.pack("<BBBHHBB", OP_ENCODE, int(kind), c, w, h,
                           cfg.quant, cfg.block) + plane.tobytes()
        if kind == FrameKind.P:
            body += reference.tobytes()
        _write_msg(self.proc.stdin, body)
        resp = _read_msg(self.proc.stdout)
        if not resp or resp[0] != OP_ENCODE:
            raise ExternalCodecError("bad encode response")
        (hdr_len,) = struct.unpack_from("<H", resp, 1)
        header = resp[3:3 + hdr_len]
        payload = resp[3 + hdr_len:]
        return EncodedFrame(frame_id, gop_id, kind, modality, header, payload)

    def decode(self, enc: EncodedFrame, reference: np.ndarray | None,
               zero_fill_ranges=(), *, block: int = 16):
        data = enc.to_bytes()
        h, w, c = self._geometry(enc)
        ranges = list(zero_fill_ranges)
        body = struct.pack("<BBBHHH", OP_DECODE, int(enc.kind), c, w, h,
                           len(ranges))
        for lo, hi in ranges:
            body += struct.pack("<II", lo, hi)
        body += struct.pack("<I", len(data)) + data
        if enc.kind == FrameKind.P:
            body += reference.tobytes()
        _write_msg(self.proc.stdin, body)
        resp = _read_msg(self.proc.stdout)
        if not resp or resp[0] != OP_DECODE:
            raise ExternalCodecError("bad decode response")
        n = _plane_bytes(w, h, c)
        shape = (h, w, c) if c > 1 else (h, w)
        plane = np.frombuffer(resp, np.uint8, n, 1).reshape(shape).copy()
        gh, gw = h // block, w // block
        grid = np.unpackbits(np.frombuffer(resp, np.uint8, -1, 1 + n),
                             count=gh * gw).astype(bool).reshape(gh, gw)
        return plane, CorruptionMask(grid)

    @staticmethod
    def _geometry(enc: EncodedFrame):
        hdr = _codec.parse_header(enc.header)
        return hdr.height, hdr.width, hdr.channels


def serve_reference(stdin=None, stdout=None) -> None:
    """Serve the built-in codec over the hook protocol until EOF."""
    stdin = stdin or sys.stdin.buffer
    stdout = stdout or sys.stdout.buffer
    while True:
        body = _read_msg(stdin)
        if not body:
            return
        op = body[0]
        if op == OP_ENCODE:
            kind, c, w, h, quant, block = struct.unpack_from("<BBHHBB", body, 1)
            off = struct.calcsize("<BBBHHBB")
            shape = (h, w, c) if c > 1 else (h, w)
            n = _plane_bytes(w, h, c)
            plane = np.frombuffer(body, np.uint8, n, off).reshape(shape)
            cfg = CodecConfig(block=block, quant=quant)
            if FrameKind(kind) == FrameKind.I:
                enc = _codec.encode_i(plane, cfg)
            else:
                ref = np.frombuffer(body, np.uint8, n, off + n).reshape(shape)
                enc = _codec.encode_p(plane, ref, cfg)
            out = struct.pack("<BH", OP_ENCODE, len(enc.header)) \
                + enc.header + enc.payload
            _write_msg(stdout, out)
        elif op == OP_DECODE:
            kind, c, w, h, n_ranges = struct.unpack_from("<BBHHH", body, 1)
            off = struct.calcsize("<BBBHHH")
            ranges = []
            for _ in range(n_ranges):
                lo, hi = struct.unpack_from("<II", body, off)
                ranges.append((lo, hi))
                off += 8
            (enc_len,) = struct.unpack_from("<I", body, off)
            off += 4
            data = body[off:off + enc_len]
            off += enc_len
            shape = (h, w, c) if c > 1 else (h, w)
            n = _plane_bytes(w, h, c)
            ref = None
            if FrameKind(kind) == FrameKind.P:
                ref = np.frombuffer(body, np.uint8, n, off).reshape(shape)
            # ranges are payload-relative, matching the in-process decode call
            hdr = _codec.parse_header(data)
            enc = EncodedFrame(0, 0, FrameKind(kind), Modality.RGB,
                               data[:hdr.header_len], data[hdr.header_len:])
            plane, mask = _codec.decode(enc, ref, ranges)
            out = struct.pack("<B", OP_DECODE) + plane.tobytes() \
                + np.packbits(mask.grid.reshape(-1)).tobytes()
            _write_msg(stdout, out)
        else:
            raise ExternalCodecError("unknown op %d" % op)


if __name__ == "__main__":
    serve_reference()
