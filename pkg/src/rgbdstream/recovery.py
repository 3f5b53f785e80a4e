"""Post-decode loss recovery.

Backends implement a single call: given a corrupted plane, its corruption
mask, and up to k recent displayable reference planes, return a recovered
plane.  Recovered pixels are merged through the mask, so trusted content is
never rewritten no matter what a backend does.

The built-in baseline replaces each masked block with the best-matching
block from the most recent reference, found by a +/-8 px shift search scored
with sum-of-absolute-differences on the block's intact one-pixel neighbor
ring.  The depth variant additionally median-smooths across former mask
boundaries to suppress patch-boundary steps.
"""

from __future__ import annotations

import socket
import struct
import time
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import median_filter, binary_dilation

from .codec import CorruptionMask
from .frames import Modality

DEFAULT_K = 5
SEARCH_RADIUS = 8
PROTOCOL_VERSION = 1
PROTOCOL_BLOCK = 16   # block edge assumed by the wire protocol's mask bitset

MSG_HANDSHAKE = 0
MSG_REQUEST = 1
MSG_RESPONSE = 2


class BackendFault(Exception):
    """Remote backend violated the wire protocol."""


@dataclass
class RecoveryRequest:
    frame_id: int
    modality: Modality
    plane: np.ndarray            # corrupted decode output
    mask: CorruptionMask
    references: list[np.ndarray]  # most recent last, len <= k

    @property
    def block(self) -> int:
        return self.plane.shape[0] // self.mask.grid.shape[0]


@dataclass
class RecoveryResponse:
    plane: np.ndarray
    latency_ms: float
    fallback: bool = False        # no references / backend timeout
    timeout: bool = False


class ReferenceRing:
    """FIFO of the k most recent displayable planes."""

    def __init__(self, k: int = DEFAULT_K):
        if k < 1:
            raise ValueError("k must be >= 1")
        self.k = k
        self._ring: deque[np.ndarray] = deque(maxlen=k)

    def push(self, plane: np.ndarray) -> None:
        self._ring.append(plane)

    def snapshot(self) -> list[np.ndarray]:
        return list(self._ring)

    def reset(self) -> None:
        self._ring.clear()

    def __len__(self):
        return len(self._ring)


def masked_merge(original: np.ndarray, recovered: np.ndarray,
                 mask: CorruptionMask, block: int) -> np.ndarray:
    """Take recovered content only where the mask marks corruption."""
    channels = 1 if original.ndim == 2 else original.shape[2]
    pix = mask.to_pixels(block, channels)
    return np.where(pix, recovered, original)


def _ring_coords(y0: int, x0: int, block: int, h: int, w: int):
    """Coordinates of the one-pixel border ring around a block, clipped."""
    ys, xs = [], []
    for x in range(x0 - 1, x0 + block + 1):
        ys.extend((y0 - 1, y0 + block))
        xs.extend((x, x))
    for y in range(y0, y0 + block):
        ys.extend((y, y))
        xs.extend((x0 - 1, x0 + block))
    ys = np.asarray(ys)
    xs = np.asarray(xs)
    keep = (ys >= 0) & (ys < h) & (xs >= 0) & (xs < w)
    return ys[keep], xs[keep]


def _best_shift(template_y, template_x, template_vals, ref, block_rad=SEARCH_RADIUS):
    """Best (dy, dx) minimizing SAD between template pixels and shifted reference."""
    h, w = ref.shape[:2]
    shifts = np.arange(-block_rad, block_rad + 1)
    dys, dxs = np.meshgrid(shifts, shifts, indexing="ij")
    dys = dys.reshape(-1)
    dxs = dxs.reshape(-1)
    ys = template_y[None, :] + dys[:, None]
    xs = template_x[None, :] + dxs[:, None]
    valid = (ys >= 0) & (ys < h) & (xs >= 0) & (xs < w)
    ys = np.clip(ys, 0, h - 1)
    xs = np.clip(xs, 0, w - 1)
    cand = ref[ys, xs].astype(np.int32)
    diff = np.abs(cand - template_vals.astype(np.int32)[None])
    if diff.ndim == 3:   # tri-channel: SAD summed over channels
        diff = diff.sum(axis=-1)
    sad = np.where(valid, diff, 0).sum(axis=1).astype(np.float64)
    # penalize shifts with few valid pixels; prefer small shifts on ties
    nvalid = valid.sum(axis=1)
    score = np.where(nvalid > 0, sad / np.maximum(nvalid, 1), np.inf)
    score += 1e-6 * (np.abs(dys) + np.abs(dxs))
    best = int(np.argmin(score))
    return int(dys[best]), int(dxs[best])


def recover_baseline_rgb(req: RecoveryRequest) -> RecoveryResponse:
    """Block-match recovery against the most recent reference."""
    t0 = time.perf_counter()
    if not req.references:
        return RecoveryResponse(req.plane.copy(),
                                (time.perf_counter() - t0) * 1000.0, fallback=True)
    if not req.mask.any:
        return RecoveryResponse(req.plane.copy(), (time.perf_counter() - t0) * 1000.0)
    ref = req.references[-1]
    block = req.block
    h, w = req.plane.shape[:2]
    out = req.plane.copy()
    pix_mask = req.mask.to_pixels(block)
    for by, bx in zip(*np.nonzero(req.mask.grid)):
        y0, x0 = by * block, bx * block
        ry, rx = _ring_coords(y0, x0, block, h, w)
        intact = ~pix_mask[ry, rx]
        if intact.any():
            ry, rx = ry[intact], rx[intact]
            tmpl = req.plane[ry, rx]
        else:
            # fully masked neighborhood: match on the stale block content itself
            yy, xx = np.meshgrid(np.arange(y0, y0 + block),
                                 np.arange(x0, x0 + block), indexing="ij")
            ry, rx = yy.reshape(-1), xx.reshape(-1)
            tmpl = req.plane[ry, rx]
        dy, dx = _best_shift(ry, rx, tmpl, ref)
        sy = np.clip(np.arange(y0, y0 + block) + dy, 0, h - 1)
        sx = np.clip(np.arange(x0, x0 + block) + dx, 0, w - 1)
        out[y0:y0 + block, x0:x0 + block] = ref[np.ix_(sy, sx)]
    out = masked_merge(req.plane, out, req.mask, block)
    return RecoveryResponse(out, (time.perf_counter() - t0) * 1000.0)


def recover_baseline_depth(req: RecoveryRequest) -> RecoveryResponse:
    """RGB baseline plus edge-preserving smoothing across mask boundaries."""
    t0 = time.perf_counter()
    base = recover_baseline_rgb(req)
    if base.fallback or not req.mask.any:
        base.latency_ms = (time.perf_counter() - t0) * 1000.0
        return base
    block = req.block
    plane = base.plane
    pix = req.mask.to_pixels(block)
    # smooth only the two-pixel band straddling former mask boundaries,
    # working on the masked region's bounding box rather than the full plane
    ys, xs = np.nonzero(pix)
    h, w = plane.shape[:2]
    y0, y1 = max(ys.min() - 2, 0), min(ys.max() + 3, h)
    x0, x1 = max(xs.min() - 2, 0), min(xs.max() + 3, w)
    sub = plane[y0:y1, x0:x1]
    sub_pix = pix[y0:y1, x0:x1]
    boundary = binary_dilation(sub_pix) & ~sub_pix | (binary_dilation(~sub_pix) & sub_pix)
    smoothed = median_filter(sub, size=3, mode="nearest")
    out = plane.copy()
    out[y0:y1, x0:x1] = np.where(boundary, smoothed, sub)
    return RecoveryResponse(out, (time.perf_counter() - t0) * 1000.0)


def recover_baseline(req: RecoveryRequest) -> RecoveryResponse:
    if req.modality == Modality.RGB:
        return recover_baseline_rgb(req)
    return recover_baseline_depth(req)


# --- recovery wire protocol -------------------------------------------------
#
# Length-prefixed binary messages over a local socket (all integers LE):
#   handshake: u32 len | u8 type=0 | u8 version | u8 modality_bitmask
#   request:   u32 len | u8 type=1 | u8 modality | u32 frame_id | u16 width
#              | u16 height | u8 k_refs | mask bitset | plane | k_refs planes
#   response:  u32 len | u8 type=2 | u32 frame_id | plane
# The u32 length counts the bytes that follow it.  The mask bitset is
# row-major over the block grid at a 16 px block edge.


def _plane_nbytes(width: int, height: int, modality: Modality) -> int:
    return width * height * (3 if modality == Modality.RGB else 1)


def _mask_nbytes(width: int, height: int) -> int:
    blocks = (width // PROTOCOL_BLOCK) * (height // PROTOCOL_BLOCK)
    return (blocks + 7) // 8


def encode_request(req: RecoveryRequest) -> bytes:
    h, w = req.plane.shape[:2]
    mask_bits = np.packbits(req.mask.grid.reshape(-1)).tobytes()
    body = struct.pack("<BBIHHB", MSG_REQUEST, int(req.modality), req.frame_id,
                       w, h, len(req.references))
    body += mask_bits + req.plane.tobytes()
    for r in req.references:
        body += r.tobytes()
    return struct.pack("<I", len(body)) + body


def decode_request(body: bytes) -> RecoveryRequest:
    msg_type, modality, frame_id, w, h, k_refs = struct.unpack_from("<BBIHHB", body)
    if msg_type != MSG_REQUEST:
        raise BackendFault("expected request, got type %d" % msg_type)
    modality = Modality(modality)
    off = struct.calcsize("<BBIHHB")
    mlen = _mask_nbytes(w, h)
    plen = _plane_nbytes(w, h, modality)
    expect = off + mlen + plen * (1 + k_refs)
    if len(body) != expect:
        raise BackendFault("request length %d, expected %d" % (len(body), expect))
    gh, gw = h // PROTOCOL_BLOCK, w // PROTOCOL_BLOCK
    grid = np.unpackbits(np.frombuffer(body, np.uint8, mlen, off),
                         count=gh * gw).astype(bool).reshape(gh, gw)
    off += mlen
    shape = (h, w, 3) if modality == Modality.RGB else (h, w)
    plane = np.frombuffer(body, np.uint8, plen, off).reshape(shape).copy()
    off += plen
    refs = []
    for _ in range(k_refs):
        refs.append(np.frombuffer(body, np.uint8, plen, off).reshape(shape).copy())
        off += plen
    return RecoveryRequest(frame_id, modality, plane, CorruptionMask(grid), refs)


def encode_response(frame_id: int, plane: np.ndarray) -> bytes:
    body = struct.pack("<BI", MSG_RESPONSE, frame_id) + plane.tobytes()
    return struct.pack("<I", len(body)) + body


def encode_handshake(modalities=(Modality.RGB, Modality.DEPTH)) -> bytes:
    bitmask = 0
    for m in modalities:
        bitmask |= 1 << int(m)
    body = struct.pack("<BBB", MSG_HANDSHAKE, PROTOCOL_VERSION, bitmask)
    return struct.pack("<I", len(body)) + body


def read_message(sock: socket.socket) -> bytes:
    """Read one length-prefixed message body; empty bytes on clean EOF."""
    head = _read_exact(sock, 4)
    if not head:
        return b""
    (length,) = struct.unpack("<I", head)
    body = _read_exact(sock, length)
    if len(body) != length:
        raise BackendFault("short read: %d of %d bytes" % (len(body), length))
    return body


def _read_exact(sock: socket.socket, n: int) -> bytes:
    buf = b""
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            return buf
        buf += chunk
    return buf


class RemoteBackend:
    """Client for the remote recovery backend; falls back to the baseline
    when the backend misses the latency budget or violates the protocol."""

    def __init__(self, endpoint: tuple[str, int], budget_ms: float = 33.33):
        self.endpoint = endpoint
        self.budget_ms = budget_ms
        self.sock: socket.socket | None = None
        self.supported: int = 0

    def connect(self) -> None:
        self.sock = socket.create_connection(self.endpoint, timeout=5.0)
        self.sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        body = read_message(self.sock)
        if len(body) < 3 or body[0] != MSG_HANDSHAKE:
            raise BackendFault("bad handshake")
        if body[1] != PROTOCOL_VERSION:
            raise BackendFault("backend protocol version %d unsupported" % body[1])
        self.supported = body[2]

    def close(self) -> None:
        if self.sock is not None:
            self.sock.close()
            self.sock = None

    def recover(self, req: RecoveryRequest,
                budget_ms: float | None = None) -> RecoveryResponse:
        if self.sock is None:
            self.connect()
        budget = self.budget_ms if budget_ms is None else budget_ms
        t0 = time.perf_counter()
        try:
            self.sock.settimeout(max(budget / 1000.0, 1e-3))
            self.sock.sendall(encode_request(req))
            body = read_message(self.sock)
            if not body:
                raise BackendFault("backend closed connection")
            if body[0] != MSG_RESPONSE:
                raise BackendFault("unexpected message type %d" % body[0])
            (frame_id,) = struct.unpack_from("<I", body, 1)
            raw = body[5:]
            if len(raw) != req.plane.nbytes:
                raise BackendFault("response plane length %d, expected %d"
                                   % (len(raw), req.plane.nbytes))
            plane = np.frombuffer(raw, np.uint8).reshape(req.plane.shape).copy()
        except (socket.timeout, TimeoutError):
            self.close()
            resp = recover_baseline(req)
            resp.timeout = True
            resp.fallback = True
            return resp
        except (BackendFault, OSError):
            self.close()
            resp = recover_baseline(req)
            resp.fallback = True
            return resp
        # enforce masked-merge locally: trusted pixels always pass through
        merged = masked_merge(req.plane, plane, req.mask, req.block)
        return RecoveryResponse(merged, (time.perf_counter() - t0) * 1000.0)
