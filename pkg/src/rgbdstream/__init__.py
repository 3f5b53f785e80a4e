"""Loss-resilient RGB-D streaming pipeline and evaluation harness."""

from .channel import ChannelConfig, ChannelSim, GEModel, load_trace, transmit
from .codec import CodecConfig, CorruptionMask, EncodedFrame, UndecodableError
from .fec import (ProtectionMode, ProtectionPolicy, ShardSet, UnrecoverableError,
                  plan_protection, rs_encode, rs_reconstruct)
from .frames import (FrameKind, GoPSpec, MalformedClipError, Modality, RGBDFrame,
                     gop_position, load_descriptor, load_raw_video, save_raw_video)
from .metrics import (FrameRecord, FreezeEvent, Outcome, SessionReport,
                      emit_report, emit_series, freeze_stats, overhead, psnr, ssim)
from .packet import DescPacket, PacketError, interleave, packetize, parse, serialize
from .receiver import Receiver
from .recovery import (RecoveryRequest, RecoveryResponse, ReferenceRing,
                       RemoteBackend, recover_baseline)
from .session import SessionConfig, run_session, run_sweep

__version__ = "0.1.0"

__all__ = [
    "ChannelConfig", "ChannelSim", "GEModel", "load_trace", "transmit",
    "CodecConfig", "CorruptionMask", "EncodedFrame", "UndecodableError",
    "ProtectionMode", "ProtectionPolicy", "ShardSet", "UnrecoverableError",
    "plan_protection", "rs_encode", "rs_reconstruct",
    "FrameKind", "GoPSpec", "MalformedClipError", "Modality", "RGBDFrame",
    "gop_position", "load_descriptor", "load_raw_video", "save_raw_video",
    "FrameRecord", "FreezeEvent", "Outcome", "SessionReport",
    "emit_report", "emit_series", "freeze_stats", "overhead", "psnr", "ssim",
    "DescPacket", "PacketError", "interleave", "packetize", "parse", "serialize",
    "Receiver",
    "RecoveryRequest", "RecoveryResponse", "ReferenceRing", "RemoteBackend",
    "recover_baseline",
    "SessionConfig", "run_session", "run_sweep",
    "__version__",
]
