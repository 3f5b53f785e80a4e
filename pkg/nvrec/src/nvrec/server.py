"""Inference server for the recovery wire protocol.

Messages are little-endian and length-prefixed with a u32 that counts the
bytes after it:

- handshake (server -> client on connect):
  ``u8 type=0 | u8 version | u8 modality bitmask`` (RGB = bit 0, depth = bit 1)
- request: ``u8 type=1 | u8 modality | u32 frame_id | u16 width | u16 height
  | u8 k_refs`` followed by the corruption-mask bitset (row-major 16 px block
  grid, packed 8 per byte), the corrupted plane, then k_refs reference
  planes, most recent last.
- response: ``u8 type=2 | u32 frame_id`` followed by the recovered plane.

The server merges its prediction through the corruption mask before
replying, so pixels the client trusts are returned untouched; in echo mode
the model is bypassed and the request plane comes straight back.  A
connection that violates the protocol is dropped; the listener keeps
serving."""

from __future__ import annotations

import logging
import socket
import struct
import threading
import time

import numpy as np
import torch

from .data import MASK_BLOCK, MOD_DEPTH, MOD_RGB
from .train import Checkpoint

PROTOCOL_VERSION = 1
MSG_HANDSHAKE = 0
MSG_REQUEST = 1
MSG_RESPONSE = 2
_REQ_HEAD = struct.Struct("<BBIHHB")

log = logging.getLogger(__name__)


class ProtocolError(Exception):
    pass


def _read_exact(conn: socket.socket, n: int) -> bytes:
    buf = b""
    while len(buf) < n:
        chunk = conn.recv(n - len(buf))
        if not chunk:
            break
        buf += chunk
    return buf


def _read_message(conn: socket.socket) -> bytes:
    head = _read_exact(conn, 4)
    if not head:
        return b""
    if len(head) < 4:
        raise ProtocolError("truncated length prefix")
    (length,) = struct.unpack("<I", head)
    body = _read_exact(conn, length)
    if len(body) != length:
        raise ProtocolError("short body: %d of %d bytes" % (len(body), length))
    return body


def _frame(body: bytes) -> bytes:
    return struct.pack("<I", len(body)) + body


class RecoveryServer:
    """Serves block-loss recovery over TCP.

    Pass per-modality checkpoints, or ``echo=True`` to bypass the models and
    return request planes unchanged (protocol conformance mode)."""

    def __init__(self, bind: tuple[str, int],
                 checkpoint_rgb: Checkpoint | None = None,
                 checkpoint_depth: Checkpoint | None = None,
                 echo: bool = False):
        if not echo and checkpoint_rgb is None and checkpoint_depth is None:
            raise ValueError("need at least one checkpoint unless echo mode")
        self.echo = echo
        self.models = {}
        if checkpoint_rgb is not None:
            self.models[MOD_RGB] = checkpoint_rgb.build_model().eval()
        if checkpoint_depth is not None:
            self.models[MOD_DEPTH] = checkpoint_depth.build_model().eval()
        self.listener = socket.create_server(bind)
        # bounded accept wait so close() does not hang on a blocked accept
        self.listener.settimeout(0.2)
        self.addr = self.listener.getsockname()
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None

    @property
    def modality_bitmask(self) -> int:
        if self.echo:
            return (1 << MOD_RGB) | (1 << MOD_DEPTH)
        return sum(1 << m for m in self.models)

    # -- lifecycle ------------------------------------------------------------

    def start(self) -> None:
        self._thread = threading.Thread(target=self.serve_forever, daemon=True)
        self._thread.start()

    def close(self) -> None:
        self._stop.set()
        self.listener.close()
        if self._thread is not None:
            self._thread.join(timeout=5.0)

    def serve_forever(self) -> None:
        while not self._stop.is_set():
            try:
                conn, peer = self.listener.accept()
            except TimeoutError:
                continue
            except OSError:
                break
            conn.settimeout(None)
            try:
                self._serve_connection(conn)
            except (ProtocolError, OSError, ValueError) as exc:
                log.warning("dropping connection %s: %s", peer, exc)
            finally:
                conn.close()

    # -- request handling -----------------------------------------------------

    def _serve_connection(self, conn: socket.socket) -> None:
        conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        conn.sendall(_frame(struct.pack("<BBB", MSG_HANDSHAKE, PROTOCOL_VERSION,
                                        self.modality_bitmask)))
        while True:
            body = _read_message(conn)
            if not body:
                return
            t0 = time.perf_counter()
            frame_id, plane = self._handle_request(body)
            conn.sendall(_frame(struct.pack("<BI", MSG_RESPONSE, frame_id)
                                + plane.tobytes()))
            log.info("frame %d recovered in %.1f ms", frame_id,
                     (time.perf_counter() - t0) * 1000.0)

    def _handle_request(self, body: bytes):
        if len(body) < _REQ_HEAD.size:
            raise ProtocolError("request header truncated")
        msg, modality, frame_id, w, h, k_refs = _REQ_HEAD.unpack_from(body)
        if msg != MSG_REQUEST:
            raise ProtocolError("unexpected message type %d" % msg)
        if modality not in (MOD_RGB, MOD_DEPTH):
            raise ProtocolError("unknown modality %d" % modality)
        channels = 3 if modality == MOD_RGB else 1
        gh, gw = h // MASK_BLOCK, w // MASK_BLOCK
        mask_bytes = (gh * gw + 7) // 8
        plane_bytes = h * w * channels
        expect = _REQ_HEAD.size + mask_bytes + plane_bytes * (1 + k_refs)
        if len(body) != expect:
            raise ProtocolError("request is %d bytes, expected %d"
                                % (len(body), expect))
        off = _REQ_HEAD.size
        grid = np.unpackbits(np.frombuffer(body, np.uint8, mask_bytes, off),
                             count=gh * gw).astype(bool).reshape(gh, gw)
        off += mask_bytes
        shape = (h, w, channels)
        plane = np.frombuffer(body, np.uint8, plane_bytes, off).reshape(shape)
        off += plane_bytes
        refs = []
        for _ in range(k_refs):
            refs.append(np.frombuffer(body, np.uint8, plane_bytes, off)
                        .reshape(shape))
            off += plane_bytes
        recovered = self._recover(modality, plane, grid, refs)
        return frame_id, recovered

    def _recover(self, modality: int, plane: np.ndarray, grid: np.ndarray,
                 refs: list[np.ndarray]) -> np.ndarray:
        pix = np.repeat(np.repeat(grid, MASK_BLOCK, 0), MASK_BLOCK, 1)
        if self.echo or modality not in self.models or not refs \
                or not pix.any():
            return np.ascontiguousarray(plane)
        model = self.models[modality]
        k = model.config.k
        stack_np = np.stack(list(refs[-k:]) + [plane]).astype(np.float32) / 255.0
        stack = torch.from_numpy(stack_np).permute(0, 3, 1, 2)[None]
        mask = torch.from_numpy(pix)[None]
        with torch.no_grad():
            out = model(stack, mask)[0].permute(1, 2, 0).numpy()
        pred = np.clip(out * 255.0 + 0.5, 0, 255).astype(np.uint8)
        # trusted pixels always pass through unchanged
        return np.where(pix[:, :, None], pred, plane)
