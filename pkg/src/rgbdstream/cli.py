"""Experiment driver: run sessions, sweep protection modes, export series.

Configuration is a single JSON document; command-line flags override the
matching keys.  Schema (all keys optional unless noted):

    {
      "clip": "path/to/clip.rgbd",        # raw RGB-D file; or "synthetic"
      "descriptor": "path/to/clip.txt",   # width/height/fps sidecar
      "synthetic": {"kind": "talking", "frames": 90, "width": 128,
                    "height": 128, "seed": 0},
      "gop_len": 30, "fps": 30,
      "codec": {"block": 16, "quant": 4},
      "mode": "revo",                     # revo|l3_only|l7_only|reactive|none
      "policy": {"i_parity_ratio": 0.5, "p_header_copies": 2},
      "channel": {"prop_delay_ms": 40.0, "queue_bytes": 262144,
                  "bandwidth_kbps": 20000.0, "trace": null,
                  "ge": {"p_gb": 0.01, "p_bg": 0.3,
                         "loss_good": 0.0, "loss_bad": 1.0},
                  "lossless_frame0": true},
      "backend": "baseline",              # baseline|none|remote:host:port
      "seed": 0,
      "out": "report.json",
      "filter_corrupted": false
    }

Exit code is 0 whenever the session completes, regardless of loss outcomes;
nonzero only for configuration or I/O failures.
"""

from __future__ import annotations

import argparse
import json
import os
import struct
import sys
import time

import numpy as np

from .channel import ChannelConfig, GEModel, UdpEndpoint, load_trace
from .codec import CodecConfig
from .fec import ProtectionMode, ProtectionPolicy
from .frames import (GoPSpec, Modality, RGBDFrame, gop_position,
                     load_descriptor, load_raw_video, save_raw_video)
from .metrics import (FrameRecord, FreezeEvent, Outcome, SessionReport,
                      emit_report, emit_series)
from .packet import PAYLOAD_LEN_DEPTH, PAYLOAD_LEN_RGB, parse
from .recovery import RecoveryResponse, RemoteBackend
from .session import SessionConfig, build_schedule, playout, run_session
from . import session as _session
from .channel import Delivery
from . import synthetic

END_SENTINEL = b"END\x00"
ACK_SENTINEL = b"ACK\x00"


class ConfigError(ValueError):
    pass


def _load_config(path: str) -> dict:
    try:
        with open(path) as f:
            return json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError("cannot load config %s: %s" % (path, e)) from e


def _load_frames(cfg: dict) -> list[RGBDFrame]:
    block = cfg.get("codec", {}).get("block", 16)
    if "clip" in cfg:
        desc_path = cfg.get("descriptor")
        if desc_path is None:
            raise ConfigError("clip requires a descriptor path")
        for p in (cfg["clip"], desc_path):
            if not os.path.exists(p):
                raise ConfigError("referenced file does not exist: %s" % p)
        desc = load_descriptor(desc_path)
        return load_raw_video(cfg["clip"], desc["width"], desc["height"],
                              desc["fps"], block=block)
    syn = cfg.get("synthetic")
    if syn is None:
        raise ConfigError("config needs either 'clip' or 'synthetic'")
    kind = syn.get("kind", "talking")
    kwargs = dict(n_frames=int(syn.get("frames", 90)),
                  width=int(syn.get("width", 128)),
                  height=int(syn.get("height", 128)),
                  seed=int(syn.get("seed", 0)),
                  fps=float(cfg.get("fps", 30)))
    gens = {"talking": synthetic.talking_motion_clip,
            "translating": synthetic.translating_clip,
            "static": synthetic.static_clip}
    if kind not in gens:
        raise ConfigError("unknown synthetic clip kind %r" % kind)
    return gens[kind](**kwargs)


def _build_session_config(cfg: dict) -> SessionConfig:
    gop = GoPSpec(gop_len=int(cfg.get("gop_len", 30)),
                  fps=float(cfg.get("fps", 30)))
    ck = cfg.get("codec", {})
    codec_cfg = CodecConfig(block=int(ck.get("block", 16)),
                            quant=int(ck.get("quant", 4)), gop=gop)
    try:
        mode = ProtectionMode(cfg.get("mode", "revo"))
    except ValueError as e:
        raise ConfigError(str(e)) from e
    pk = cfg.get("policy", {})
    policy = ProtectionPolicy(
        i_parity_ratio=float(pk.get("i_parity_ratio", 0.5)),
        p_header_copies=int(pk.get("p_header_copies", 2)), mode=mode)
    chk = cfg.get("channel", {})
    trace = None
    if chk.get("trace"):
        if not os.path.exists(chk["trace"]):
            raise ConfigError("trace file does not exist: %s" % chk["trace"])
        trace = load_trace(chk["trace"])
    ge = GEModel(**chk["ge"]) if chk.get("ge") else None
    channel = ChannelConfig(
        prop_delay_ms=float(chk.get("prop_delay_ms", 40.0)),
        queue_bytes=int(chk.get("queue_bytes", 256 * 1024)),
        bandwidth_kbps=float(chk.get("bandwidth_kbps", 20000.0)),
        trace=trace, ge=ge,
        lossless_frame0=bool(chk.get("lossless_frame0", True)))
    return SessionConfig(codec=codec_cfg, policy=policy, channel=channel,
                         payload_len={Modality.RGB: PAYLOAD_LEN_RGB,
                                      Modality.DEPTH: PAYLOAD_LEN_DEPTH},
                         seed=int(cfg.get("seed", 0)))


def _passthrough_backend(req):
    return RecoveryResponse(req.plane.copy(), 0.0, fallback=True)


def _make_backend(spec: str):
    """backend spec -> (callable or None, closer)."""
    if spec in (None, "baseline"):
        return None, lambda: None
    if spec == "none":
        return _passthrough_backend, lambda: None
    if spec.startswith("remote:"):
        hostport = spec[len("remote:"):]
        host, _, port = hostport.rpartition(":")
        if not host or not port.isdigit():
            raise ConfigError("bad remote backend address %r" % hostport)
        remote = RemoteBackend((host, int(port)))
        remote.connect()   # fail fast on handshake problems
        return remote.recover, remote.close
    raise ConfigError("unknown backend %r" % spec)


def _apply_overrides(cfg: dict, args) -> dict:
    if getattr(args, "mode", None):
        cfg["mode"] = args.mode
    if getattr(args, "trace", None):
        cfg.setdefault("channel", {})["trace"] = args.trace
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    if getattr(args, "out", None):
        cfg["out"] = args.out
    if getattr(args, "backend", None):
        cfg["backend"] = args.backend
    if getattr(args, "filter_corrupted", False):
        cfg["filter_corrupted"] = True
    return cfg


# --- corruption export -------------------------------------------------------

def _export_sink(frames, out_dir, fps):
    """Build a frame_sink that captures displayed planes and masks, plus a
    writer that lays down the (clean, corrupted, masks) triple."""
    os.makedirs(out_dir, exist_ok=True)
    shown = {}
    masks = {}

    def sink(frame_id, modality, outcome, shown_plane):
        shown[(frame_id, modality)] = shown_plane
        masks[(frame_id, modality)] = outcome.mask

    def write():
        h, w = frames[0].depth.shape
        clean = os.path.join(out_dir, "clean.rgbd")
        corrupted = os.path.join(out_dir, "corrupted.rgbd")
        mask_path = os.path.join(out_dir, "masks.bin")
        save_raw_video(clean, frames)
        out_frames = []
        for f in frames:
            rgb = shown.get((f.frame_id, Modality.RGB))
            depth = shown.get((f.frame_id, Modality.DEPTH))
            out_frames.append(RGBDFrame(
                frame_id=f.frame_id,
                rgb=(f.rgb if rgb is None else rgb).copy(),
                depth=(f.depth if depth is None else depth).copy(),
                capture_ts=f.capture_ts))
        save_raw_video(corrupted, out_frames)
        with open(mask_path, "wb") as mf:
            for f in frames:
                for mod in Modality:
                    mask = masks.get((f.frame_id, mod))
                    if mask is not None:
                        grid = mask.grid
                    else:
                        # frame never displayed fresh: everything is stale
                        grid = np.ones((h // 16, w // 16), dtype=bool)
                    gh, gw = grid.shape
                    mf.write(struct.pack("<IBHH", f.frame_id, int(mod), gh, gw))
                    mf.write(np.packbits(grid.reshape(-1)).tobytes())
        desc = os.path.join(out_dir, "descriptor.txt")
        with open(desc, "w") as df:
            df.write("width=%d\nheight=%d\nfps=%g\n" % (w, h, fps))
        with open(os.path.join(out_dir, "manifest.json"), "w") as jf:
            json.dump({"clean": clean, "corrupted": corrupted,
                       "masks": mask_path, "descriptor": desc,
                       "width": w, "height": h, "fps": fps,
                       "frames": len(frames)}, jf, indent=2, sort_keys=True)
            jf.write("\n")

    return sink, write


# --- subcommands -------------------------------------------------------------

def _cmd_run(args) -> int:
    cfg = _apply_overrides(_load_config(args.config), args)
    frames = _load_frames(cfg)
    sc = _build_session_config(cfg)
    backend, closer = _make_backend(cfg.get("backend", "baseline"))
    sink = write_export = None
    if args.export_corrupted:
        sink, write_export = _export_sink(frames, args.export_corrupted,
                                          sc.codec.gop.fps)
    try:
        if args.transport == "udp":
            if not args.peer:
                raise ConfigError("--transport udp requires --peer host:port")
            host, _, port = args.peer.rpartition(":")
            _udp_send(frames, sc, (host, int(port)))
            return 0
        report = run_session(frames, sc, backend=backend,
                             outcome_log=args.outcome_log, frame_sink=sink)
    finally:
        closer()
    if write_export is not None:
        write_export()
    out = cfg.get("out")
    if out:
        fmt = "csv" if out.endswith(".csv") else "json"
        emit_report(report, out, fmt=fmt,
                    corrupted_only=cfg.get("filter_corrupted", False))
    print(json.dumps(report.summary(cfg.get("filter_corrupted", False)),
                     indent=2, sort_keys=True))
    return 0


def _loss_rates(report: SessionReport, gop: GoPSpec):
    i_total = i_lost = p_total = p_lost = 0
    for r in report.records:
        _, kind = gop_position(r.frame_id, gop)
        if kind.name == "I":
            i_total += 1
            i_lost += r.outcome.non_recovered
        else:
            p_total += 1
            p_lost += r.outcome.non_recovered
    return (100.0 * i_lost / i_total if i_total else 0.0,
            100.0 * p_lost / p_total if p_total else 0.0)


def _cmd_sweep(args) -> int:
    cfg = _apply_overrides(_load_config(args.config), args)
    frames = _load_frames(cfg)
    sc = _build_session_config(cfg)
    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    if not modes:
        raise ConfigError("--modes must name at least one mode")
    backend_spec = cfg.get("backend", "baseline")

    def factory():
        backend, _ = _make_backend(backend_spec)
        return backend

    reports = _session.run_sweep(frames, sc, modes, backend_factory=factory)
    cols = ["mode", "i_loss_pct", "p_loss_pct", "median_freeze_ms",
            "non_recovered_pct", "overhead", "ssim_rgb", "ssim_depth"]
    rows = []
    for mode, report in reports.items():
        s = report.summary()
        i_loss, p_loss = _loss_rates(report, sc.codec.gop)
        rows.append([mode, "%.2f" % i_loss, "%.2f" % p_loss,
                     "%.1f" % s["median_freeze_ms"],
                     "%.2f" % s["non_recovered_pct"],
                     "%.4f" % s["overhead"],
                     "-" if s["median_ssim_rgb"] is None
                     else "%.4f" % s["median_ssim_rgb"],
                     "-" if s["median_ssim_depth"] is None
                     else "%.4f" % s["median_ssim_depth"]])
    widths = [max(len(c), *(len(r[i]) for r in rows))
              for i, c in enumerate(cols)]
    line = "  ".join(c.ljust(w) for c, w in zip(cols, widths))
    print(line)
    print("-" * len(line))
    for r in rows:
        print("  ".join(v.ljust(w) for v, w in zip(r, widths)))
    if args.out:
        payload = {mode: report.to_dict() for mode, report in reports.items()}
        with open(args.out, "w") as f:
            json.dump(payload, f, indent=2, sort_keys=True)
            f.write("\n")
    return 0


def _report_from_json(d: dict) -> SessionReport:
    report = SessionReport(mode=d.get("mode", ""), seed=d.get("seed", 0),
                           config=d.get("config", {}))
    b = d.get("bytes", {})
    report.bytes_data = b.get("data", 0)
    report.bytes_parity = b.get("parity", 0)
    report.bytes_dup = b.get("dup", 0)
    for f in d.get("freeze_log", []):
        report.freeze_log.append(FreezeEvent(f["start_ts"], f["duration_ms"]))

    def num(x):
        if x == "inf":
            return float("inf")
        return x

    for r in d.get("frames", []):
        report.records.append(FrameRecord(
            frame_id=r["frame_id"], modality=r["modality"],
            outcome=Outcome(r["outcome"]), ssim=num(r["ssim"]),
            psnr=num(r["psnr"]), recovered=r.get("recovered", False)))
    return report


def _cmd_series(args) -> int:
    with open(args.report) as f:
        data = json.load(f)
    report = _report_from_json(data)
    fps = data.get("config", {}).get("codec", {}).get("fps", 30.0)
    emit_series(report, args.out, fps)
    return 0


# --- live UDP transport ------------------------------------------------------

def _udp_send(frames, sc: SessionConfig, peer: tuple[str, int]) -> None:
    """Stream a pre-packetized clip over UDP in wall-clock time.

    Frame 0 is retransmitted until the receiver acknowledges it; everything
    else is fire-and-forget, paced by the schedule offsets.
    """
    report = SessionReport(mode=sc.mode.value, seed=sc.seed, config={})
    schedule = build_schedule(frames, sc, report)
    f0 = [(ts, p) for ts, p in schedule if p.frame_id == 0]
    rest = [(ts, p) for ts, p in schedule if p.frame_id != 0]
    with UdpEndpoint(bind=("0.0.0.0", 0)) as ep:
        for attempt in range(50):
            for _, pkt in f0:
                ep.send_packet(pkt, peer)
            if ep.recv(timeout=0.2) == ACK_SENTINEL:
                break
        else:
            raise RuntimeError("receiver never acknowledged frame 0")
        start = time.monotonic()
        # frame 0 already went out during the handshake; pace the remainder
        # from its own first offset so frame 1 leaves immediately after ACK
        base = min((ts for ts, _ in rest), default=0.0)
        for ts, pkt in rest:
            delay = start + (ts - base) / 1000.0 - time.monotonic()
            if delay > 0:
                time.sleep(delay)
            ep.send_packet(pkt, peer)
        for _ in range(3):
            ep.send(END_SENTINEL, peer)


def _cmd_listen(args) -> int:
    cfg = _apply_overrides(_load_config(args.config), args)
    frames = _load_frames(cfg)
    sc = _build_session_config(cfg)
    backend, closer = _make_backend(cfg.get("backend", "baseline"))
    host, _, port = args.bind.rpartition(":")
    arrivals: dict[tuple[int, Modality], list[Delivery]] = {}
    acked = False
    with UdpEndpoint(bind=(host or "0.0.0.0", int(port))) as ep:
        sender = None
        start = None
        while True:
            ep.sock.settimeout(args.idle_timeout)
            try:
                data, addr = ep.sock.recvfrom(65536)
            except OSError:
                break   # idle: assume the stream ended
            if data == END_SENTINEL:
                break
            try:
                pkt = parse(data)
            except Exception:
                continue
            sender = addr
            now = time.monotonic()
            if start is None:
                start = now
            arrivals.setdefault((pkt.frame_id, pkt.modality), []).append(
                Delivery((now - start) * 1000.0, (now - start) * 1000.0, pkt))
            if not acked and pkt.frame_id == 0:
                n_rgb = len(arrivals.get((0, Modality.RGB), ()))
                n_dep = len(arrivals.get((0, Modality.DEPTH), ()))
                if n_rgb and n_dep:
                    ep.send(ACK_SENTINEL, sender)
                    acked = True
    report = SessionReport(mode=sc.mode.value, seed=sc.seed, config={})
    try:
        playout(frames, sc, arrivals, report, backend=backend)
    finally:
        closer()
    out = cfg.get("out")
    if out:
        emit_report(report, out,
                    corrupted_only=cfg.get("filter_corrupted", False))
    print(json.dumps(report.summary(cfg.get("filter_corrupted", False)),
                     indent=2, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rgbdstream",
                                 description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one streaming session")
    run.add_argument("--config", required=True)
    run.add_argument("--mode", choices=[m.value for m in ProtectionMode])
    run.add_argument("--trace")
    run.add_argument("--seed", type=int)
    run.add_argument("--out")
    run.add_argument("--transport", choices=["sim", "udp"], default="sim")
    run.add_argument("--peer", help="host:port for --transport udp")
    run.add_argument("--backend", help="baseline | none | remote:host:port")
    run.add_argument("--filter-corrupted", action="store_true")
    run.add_argument("--outcome-log", help="per-frame outcome jsonl path")
    run.add_argument("--export-corrupted", metavar="DIR",
                     help="write (clean, corrupted, masks) training triple")
    run.set_defaults(func=_cmd_run)

    sweep = sub.add_parser("sweep", help="run one session per protection mode")
    sweep.add_argument("--config", required=True)
    sweep.add_argument("--modes", required=True,
                       help="comma-separated mode list")
    sweep.add_argument("--seed", type=int)
    sweep.add_argument("--trace")
    sweep.add_argument("--out", help="write all reports as one JSON document")
    sweep.set_defaults(func=_cmd_sweep)

    series = sub.add_parser("series",
                            help="convert a JSON report to a plot series CSV")
    series.add_argument("--report", required=True)
    series.add_argument("--out", required=True)
    series.set_defaults(func=_cmd_series)

    listen = sub.add_parser("listen", help="receive a live UDP session")
    listen.add_argument("--config", required=True)
    listen.add_argument("--bind", required=True, help="host:port to bind")
    listen.add_argument("--seed", type=int)
    listen.add_argument("--out")
    listen.add_argument("--backend")
    listen.add_argument("--filter-corrupted", action="store_true")
    listen.add_argument("--idle-timeout", type=float, default=5.0)
    listen.set_defaults(func=_cmd_listen)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print("error: %s" % e, file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
