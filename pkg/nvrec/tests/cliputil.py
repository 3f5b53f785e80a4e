"""Shared fixtures: tiny synthetic clips and on-disk corpus directories."""

import json
import os
import struct

import numpy as np
import pytest
import torch

torch.set_num_threads(1)


def desk_depth_clip(frames, h, w, seed):
    """Piecewise-planar depth: a receding surface plus translating
    constant-depth boxes; shape (frames, h, w, 1) uint8."""
    r = np.random.default_rng(seed)
    yy = np.mgrid[0:h, 0:w][0].astype(np.float32)
    base = 200 - r.uniform(0.2, 0.6) * yy
    boxes = [(r.integers(0, h - 12), r.integers(0, w - 12),
              r.integers(8, 14), r.integers(8, 14),
              r.uniform(60, 140), r.uniform(-1.5, 1.5)) for _ in range(2)]
    out = []
    for i in range(frames):
        plane = base.copy()
        for (y0, x0, bh, bw, d, v) in boxes:
            x = int(x0 + v * i) % (w - bw)
            plane[y0:y0 + bh, x:x + bw] = d
        out.append(np.clip(plane, 0, 255).astype(np.uint8))
    return np.stack(out)[..., None]


def rgb_texture_clip(frames, h, w, seed):
    """Coarse translating texture, shape (frames, h, w, 3) uint8."""
    r = np.random.default_rng(seed)
    tile = r.integers(0, 256, (h // 8 + 4, w // 8 + 4, 3), dtype=np.uint8)
    tex = np.kron(tile, np.ones((8, 8, 1), dtype=np.uint8))
    out = []
    for i in range(frames):
        dy, dx = (i * 2) % 16, (i * 3) % 16
        out.append(tex[dy:dy + h, dx:dx + w])
    return np.stack(out)


def write_corpus_dir(tmp_path, clean_rgb, clean_depth, corrupt_rgb,
                     corrupt_depth, mask_records):
    """Lay down a corruption-export directory in the documented format.

    mask_records: iterable of (frame_id, modality, bool grid).
    """
    n, h, w = clean_rgb.shape[:3]
    out = tmp_path / "corpus"
    os.makedirs(out, exist_ok=True)

    def write_clip(path, rgb, depth):
        with open(path, "wb") as f:
            for i in range(len(rgb)):
                f.write(rgb[i].tobytes())
                f.write(depth[i].tobytes())

    write_clip(out / "clean.rgbd", clean_rgb, clean_depth)
    write_clip(out / "corrupted.rgbd", corrupt_rgb, corrupt_depth)
    with open(out / "masks.bin", "wb") as f:
        for frame_id, modality, grid in mask_records:
            gh, gw = grid.shape
            f.write(struct.pack("<IBHH", frame_id, modality, gh, gw))
            f.write(np.packbits(grid.reshape(-1)).tobytes())
    manifest = {"clean": "clean.rgbd", "corrupted": "corrupted.rgbd",
                "masks": "masks.bin", "descriptor": "descriptor.txt",
                "width": w, "height": h, "fps": 30.0, "frames": n}
    (out / "descriptor.txt").write_text(
        "width=%d\nheight=%d\nfps=30\n" % (w, h))
    (out / "manifest.json").write_text(json.dumps(manifest))
    return out / "manifest.json"
