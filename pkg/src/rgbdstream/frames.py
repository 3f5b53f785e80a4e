"""Raw RGB-D frame representation, GoP structure, and clip ingestion.

A clip on disk is a flat file of concatenated frames, each frame being an
RGB plane (width*height*3 bytes, row-major) followed by a depth plane
(width*height bytes).  A sidecar text descriptor carries width, height and
fps so clips are self-describing.
"""

from __future__ import annotations

import enum
import os
from dataclasses import dataclass, field

import numpy as np


class Modality(enum.IntEnum):
    RGB = 0
    DEPTH = 1


class FrameKind(enum.IntEnum):
    I = 0
    P = 1


@dataclass(frozen=True)
class GoPSpec:
    """Group-of-pictures layout: one I-frame followed by gop_len-1 P-frames."""

    gop_len: int = 30
    fps: float = 30.0

    def __post_init__(self):
        if self.gop_len < 1:
            raise ValueError("gop_len must be >= 1")
        if self.fps <= 0:
            raise ValueError("fps must be > 0")

    @property
    def frame_interval_ms(self) -> float:
        return 1000.0 / self.fps


@dataclass(frozen=True)
class RGBDFrame:
    """One raw volumetric frame: an RGB plane plus a depth plane.

    Immutable after construction; planes are numpy uint8 arrays of shape
    (height, width, 3) and (height, width).
    """

    frame_id: int
    rgb: np.ndarray
    depth: np.ndarray
    capture_ts: float  # ms on the sender clock

    def __post_init__(self):
        h, w = self.depth.shape
        if self.rgb.shape != (h, w, 3):
            raise ValueError("rgb plane shape %r inconsistent with depth %r"
                             % (self.rgb.shape, self.depth.shape))
        self.rgb.setflags(write=False)
        self.depth.setflags(write=False)

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    def plane(self, modality: Modality) -> np.ndarray:
        return self.rgb if modality == Modality.RGB else self.depth


class MalformedClipError(ValueError):
    """Raw clip file does not match the declared geometry."""


def gop_position(frame_id: int, spec: GoPSpec) -> tuple[int, FrameKind]:
    """Map a frame index to its (gop_id, kind)."""
    if frame_id < 0:
        raise ValueError("frame_id must be >= 0")
    gop_id, pos = divmod(frame_id, spec.gop_len)
    return gop_id, FrameKind.I if pos == 0 else FrameKind.P


def split_modalities(frame: RGBDFrame) -> tuple[np.ndarray, np.ndarray]:
    """Decouple a frame into independent RGB and depth planes."""
    return frame.rgb, frame.depth


def merge_modalities(frame_id: int, rgb: np.ndarray, depth: np.ndarray,
                     capture_ts: float = 0.0) -> RGBDFrame:
    return RGBDFrame(frame_id=frame_id, rgb=rgb, depth=depth, capture_ts=capture_ts)


def pad_to_block(plane: np.ndarray, block: int) -> np.ndarray:
    """Pad a plane to a block-size multiple by edge replication."""
    h, w = plane.shape[:2]
    ph = (-h) % block
    pw = (-w) % block
    if ph == 0 and pw == 0:
        return plane
    pads = [(0, ph), (0, pw)] + [(0, 0)] * (plane.ndim - 2)
    return np.pad(plane, pads, mode="edge")


def load_raw_video(path: str | os.PathLike, width: int, height: int,
                   fps: float, block: int = 16) -> list[RGBDFrame]:
    """Load a raw interleaved RGB-D clip.

    Frames are numbered 0..N-1 with capture_ts = i*1000/fps and planes padded
    to block multiples with edge replication.
    """
    frame_bytes = width * height * 4  # 3 rgb + 1 depth
    data = np.fromfile(os.fspath(path), dtype=np.uint8)
    if len(data) % frame_bytes != 0:
        raise MalformedClipError(
            "file size %d is not a multiple of frame size %d (%dx%d RGB-D)"
            % (len(data), frame_bytes, width, height))
    n = len(data) // frame_bytes
    frames = []
    for i in range(n):
        raw = data[i * frame_bytes:(i + 1) * frame_bytes]
        rgb = raw[:width * height * 3].reshape(height, width, 3)
        depth = raw[width * height * 3:].reshape(height, width)
        frames.append(RGBDFrame(
            frame_id=i,
            rgb=pad_to_block(rgb, block),
            depth=pad_to_block(depth, block),
            capture_ts=i * 1000.0 / fps,
        ))
    return frames


def save_raw_video(path: str | os.PathLike, frames: list[RGBDFrame]) -> None:
    """Write frames back out in the raw interleaved format (unpadded planes)."""
    with open(path, "wb") as f:
        for fr in frames:
            f.write(fr.rgb.tobytes())
            f.write(fr.depth.tobytes())


def load_descriptor(path: str | os.PathLike) -> dict:
    """Parse the sidecar descriptor: `key=value` lines for width/height/fps."""
    out = {}
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            k, _, v = line.partition("=")
            out[k.strip()] = v.strip()
    try:
        return {"width": int(out["width"]), "height": int(out["height"]),
                "fps": float(out["fps"])}
    except KeyError as e:
        raise MalformedClipError("descriptor missing field %s" % e) from e
