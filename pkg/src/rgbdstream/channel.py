"""Lossy network simulation and a plain UDP loopback transport.

The simulated channel replays a trace (bandwidth/RTT/loss at 15 ms
granularity), or drives a two-state Gilbert-Elliott loss model, on top of a
serialization + queueing + fixed-propagation delay pipeline.  Outcomes are a
pure function of (schedule, config, seed).
"""

from __future__ import annotations

import socket
from dataclasses import dataclass, field

import numpy as np

from .packet import DescPacket, PacketSchedule, serialize

TRACE_SPACING_MS = 15.0
MTU = 1500


class TraceError(ValueError):
    pass


@dataclass(frozen=True)
class TraceEntry:
    ts_ms: float
    bandwidth_kbps: float
    rtt_ms: float
    loss_rate: float


def load_trace(path) -> list[TraceEntry]:
    """Load a trace CSV: `ts_ms,bandwidth_kbps,rtt_ms,loss_rate` per line."""
    entries = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if len(parts) != 4:
                raise TraceError("line %d: expected 4 fields" % lineno)
            ts, bw, rtt, loss = (float(x) for x in parts)
            if not 0.0 <= loss <= 1.0:
                raise TraceError("line %d: loss_rate %g out of range" % (lineno, loss))
            if bw <= 0 or rtt < 0:
                raise TraceError("line %d: bad bandwidth/rtt" % lineno)
            entries.append(TraceEntry(ts, bw, rtt, loss))
    if not entries:
        raise TraceError("empty trace")
    for a, b in zip(entries, entries[1:]):
        if abs((b.ts_ms - a.ts_ms) - TRACE_SPACING_MS) > 1e-6:
            raise TraceError("entries not uniformly spaced at %g ms" % TRACE_SPACING_MS)
    return entries


@dataclass(frozen=True)
class GEModel:
    """Two-state Markov loss model: good/bad states with per-state drop rates."""

    p_gb: float = 0.01
    p_bg: float = 0.3
    loss_good: float = 0.0
    loss_bad: float = 1.0

    def __post_init__(self):
        for p in (self.p_gb, self.p_bg, self.loss_good, self.loss_bad):
            if not 0.0 <= p <= 1.0:
                raise ValueError("GE probabilities must be in [0, 1]")

    def stationary_loss(self) -> float:
        denom = self.p_gb + self.p_bg
        if denom == 0:
            return self.loss_good
        pb = self.p_gb / denom
        return (1 - pb) * self.loss_good + pb * self.loss_bad


@dataclass(frozen=True)
class ChannelConfig:
    prop_delay_ms: float = 40.0
    queue_bytes: int = 256 * 1024
    bandwidth_kbps: float = 20000.0   # used when no trace supplies bandwidth
    trace: list[TraceEntry] | None = None
    ge: GEModel | None = None
    lossless_frame0: bool = True

    def __post_init__(self):
        if self.prop_delay_ms < 0:
            raise ValueError("prop_delay_ms must be >= 0")


@dataclass(frozen=True)
class Delivery:
    send_ts: float
    arrival_ts: float | None     # None = dropped
    packet: DescPacket

    @property
    def dropped(self) -> bool:
        return self.arrival_ts is None


class _GEState:
    def __init__(self, model: GEModel, rng: np.random.Generator):
        self.model = model
        self.rng = rng
        self.bad = False

    def drop(self) -> bool:
        m = self.model
        if self.bad:
            if self.rng.random() < m.p_bg:
                self.bad = False
        else:
            if self.rng.random() < m.p_gb:
                self.bad = True
        p = m.loss_bad if self.bad else m.loss_good
        return bool(self.rng.random() < p)


def _trace_at(trace: list[TraceEntry], ts: float) -> TraceEntry:
    idx = int((ts - trace[0].ts_ms) // TRACE_SPACING_MS)
    return trace[min(max(idx, 0), len(trace) - 1)]


class ChannelSim:
    """Stateful simulated channel; state persists across send() calls so a
    session can be transmitted GoP by GoP (needed for reactive FEC feedback).

    Model: serialization at the current bandwidth behind a bounded FIFO
    queue, then the fixed propagation delay; loss is applied after queueing,
    i.i.d. at the trace interval's loss rate (or by the GE model).  Frame-0
    packets bypass loss so the session anchor is always established.
    """

    def __init__(self, cfg: ChannelConfig, seed: int = 0):
        self.cfg = cfg
        self.rng = np.random.default_rng(seed)
        self.ge = _GEState(cfg.ge, self.rng) if cfg.ge is not None else None
        self.busy_until = 0.0

    def send(self, schedule: PacketSchedule) -> list[Delivery]:
        cfg = self.cfg
        out = []
        for send_ts, pkt in schedule:
            if cfg.trace is not None:
                entry = _trace_at(cfg.trace, send_ts)
                bw = entry.bandwidth_kbps
                loss = entry.loss_rate
            else:
                bw = cfg.bandwidth_kbps
                loss = 0.0
            size = pkt.wire_len
            # queue overflow: bytes awaiting serialization exceed capacity
            backlog = max(0.0, self.busy_until - send_ts) * bw / 8.0  # bytes
            if backlog + size > cfg.queue_bytes:
                out.append(Delivery(send_ts, None, pkt))
                continue
            start = max(send_ts, self.busy_until)
            ser_ms = size * 8.0 / bw
            self.busy_until = start + ser_ms
            # loss decision after queueing; still consumes randomness for
            # frame-0 packets so exempting them does not shift the stream
            if self.ge is not None:
                dropped = self.ge.drop()
            else:
                dropped = bool(self.rng.random() < loss)
            if dropped and not (cfg.lossless_frame0 and pkt.frame_id == 0):
                out.append(Delivery(send_ts, None, pkt))
                continue
            out.append(Delivery(send_ts, self.busy_until + cfg.prop_delay_ms, pkt))
        return out


def transmit(schedule: PacketSchedule, cfg: ChannelConfig,
             seed: int = 0) -> list[Delivery]:
    """One-shot wrapper around ChannelSim for a complete schedule."""
    return ChannelSim(cfg, seed).send(schedule)


# --- live UDP transport -----------------------------------------------------

class UdpEndpoint:
    """Fire-and-forget datagram transport; one serialized DescPacket per datagram."""

    def __init__(self, bind: tuple[str, int] | None = None):
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        if bind is not None:
            self.sock.bind(bind)

    @property
    def address(self) -> tuple[str, int]:
        return self.sock.getsockname()

    def send(self, data: bytes, peer: tuple[str, int]) -> None:
        if len(data) > MTU:
            raise ValueError("datagram of %d bytes exceeds MTU %d" % (len(data), MTU))
        self.sock.sendto(data, peer)

    def send_packet(self, pkt: DescPacket, peer: tuple[str, int]) -> None:
        self.send(serialize(pkt), peer)

    def recv(self, timeout: float | None = None) -> bytes | None:
        self.sock.settimeout(timeout)
        try:
            data, _ = self.sock.recvfrom(65536)
        except socket.timeout:
            return None
        return data

    def close(self) -> None:
        self.sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
