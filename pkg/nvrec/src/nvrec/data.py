"""Training data: raw RGB-D clips and the corruption-export manifest.

The streaming pipeline exports training triples as a directory containing
`manifest.json` pointing at a clean clip, the corrupted clip as displayed by
the receiver, and a per-frame corruption-mask stream:

- clips are raw interleaved frames, width*height*3 RGB bytes followed by
  width*height depth bytes;
- the mask stream is a sequence of records `<IBHH` (frame id, modality,
  grid height, grid width, little-endian) each followed by the row-major
  block grid packed 8 blocks per byte (16 px blocks).

This module only reads those documented formats; it does not import the
streaming package.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass

import numpy as np

MOD_RGB = 0
MOD_DEPTH = 1
MASK_BLOCK = 16
_MASK_HEAD = struct.Struct("<IBHH")


class CorpusError(Exception):
    pass


def read_raw_clip(path: str | os.PathLike, width: int, height: int):
    """Return (rgb, depth) arrays of shape (n, h, w, 3) and (n, h, w)."""
    frame_bytes = width * height * 4
    data = np.fromfile(os.fspath(path), dtype=np.uint8)
    if data.size == 0 or data.size % frame_bytes:
        raise CorpusError("clip %s is not a whole number of %dx%d frames"
                          % (path, width, height))
    n = data.size // frame_bytes
    data = data.reshape(n, frame_bytes)
    rgb = data[:, :width * height * 3].reshape(n, height, width, 3)
    depth = data[:, width * height * 3:].reshape(n, height, width)
    return rgb, depth


def read_mask_stream(path: str | os.PathLike) -> dict[tuple[int, int], np.ndarray]:
    """Map (frame_id, modality) -> bool block grid."""
    out = {}
    raw = open(os.fspath(path), "rb").read()
    off = 0
    while off < len(raw):
        if off + _MASK_HEAD.size > len(raw):
            raise CorpusError("truncated mask record at byte %d" % off)
        frame_id, modality, gh, gw = _MASK_HEAD.unpack_from(raw, off)
        off += _MASK_HEAD.size
        nbytes = (gh * gw + 7) // 8
        if off + nbytes > len(raw):
            raise CorpusError("truncated mask bits at byte %d" % off)
        bits = np.unpackbits(np.frombuffer(raw, np.uint8, nbytes, off),
                             count=gh * gw)
        out[(frame_id, modality)] = bits.astype(bool).reshape(gh, gw)
        off += nbytes
    return out


@dataclass
class Sample:
    """One training example for a single modality.

    Planes are float32 in [0, 1]: references (k, h, w, c) oldest first,
    corrupted and target (h, w, c), mask (h, w) bool.
    """
    references: np.ndarray
    corrupted: np.ndarray
    mask: np.ndarray
    target: np.ndarray


def _to_float(plane: np.ndarray) -> np.ndarray:
    plane = plane if plane.ndim == 3 else plane[:, :, None]
    return plane.astype(np.float32) / 255.0


@dataclass
class ManifestCorpus:
    """Triples exported by the streaming pipeline, ready for sampling."""

    clean_rgb: np.ndarray
    clean_depth: np.ndarray
    corrupt_rgb: np.ndarray
    corrupt_depth: np.ndarray
    masks: dict[tuple[int, int], np.ndarray]
    width: int
    height: int

    @classmethod
    def load(cls, manifest_path: str | os.PathLike) -> "ManifestCorpus":
        with open(os.fspath(manifest_path)) as f:
            man = json.load(f)
        base = os.path.dirname(os.fspath(manifest_path))

        def resolve(p):
            return p if os.path.isabs(p) else os.path.join(base, os.path.basename(p))

        w, h = man["width"], man["height"]
        crgb, cdep = read_raw_clip(resolve(man["clean"]), w, h)
        xrgb, xdep = read_raw_clip(resolve(man["corrupted"]), w, h)
        if len(crgb) != man["frames"] or len(xrgb) != man["frames"]:
            raise CorpusError("frame count mismatch against manifest")
        masks = read_mask_stream(resolve(man["masks"]))
        return cls(crgb, cdep, xrgb, xdep, masks, w, h)

    def samples(self, modality: int, k: int) -> list[Sample]:
        """Corrupted frames with any masked blocks, paired with the k clean
        frames preceding them."""
        clean = self.clean_rgb if modality == MOD_RGB else self.clean_depth
        corrupt = self.corrupt_rgb if modality == MOD_RGB else self.corrupt_depth
        out = []
        for i in range(k, len(clean)):
            grid = self.masks.get((i, modality))
            if grid is None or not grid.any():
                continue
            mask = np.repeat(np.repeat(grid, MASK_BLOCK, 0), MASK_BLOCK, 1)
            out.append(Sample(
                references=np.stack([_to_float(clean[j])
                                     for j in range(i - k, i)]),
                corrupted=_to_float(corrupt[i]),
                mask=mask[:self.height, :self.width],
                target=_to_float(clean[i])))
        return out


def synthetic_mask(height: int, width: int, ratio: float,
                   rng: np.random.Generator) -> np.ndarray:
    """Random block-pattern corruption mask covering ~ratio of the pixels."""
    gh, gw = height // MASK_BLOCK, width // MASK_BLOCK
    grid = rng.random((gh, gw)) < ratio
    return np.repeat(np.repeat(grid, MASK_BLOCK, 0), MASK_BLOCK, 1)


def pretrain_samples(clips: list[np.ndarray], k: int, ratio: float,
                     rng: np.random.Generator) -> list[Sample]:
    """Self-supervised examples: clean windows with synthetic masks.

    `clips` are uint8 arrays of shape (frames, h, w[, c]); the target frame
    doubles as the corrupted input with masked pixels to be reconstructed.
    """
    out = []
    for clip in clips:
        if len(clip) < k + 1:
            raise CorpusError("clip shorter than k+1 frames")
        h, w = clip.shape[1:3]
        for i in range(k, len(clip)):
            mask = synthetic_mask(h, w, ratio, rng)
            out.append(Sample(
                references=np.stack([_to_float(clip[j])
                                     for j in range(i - k, i)]),
                corrupted=_to_float(clip[i]),
                mask=mask,
                target=_to_float(clip[i])))
    if not out:
        raise CorpusError("empty corpus")
    return out
