"""Synthetic RGB-D test content.

Clips are deterministic in the seed.  Textures are coarse random cell grids
upsampled to pixel resolution, so the run-length stage of the reference
codec compresses them at ratios comparable to natural content instead of
treating them as incompressible noise.

The "talking motion" generator keeps a static background with a foreground
patch whose texture changes every frame, which holds the P:I byte ratio in
the range typical of low-motion conferencing content.
"""

from __future__ import annotations

import numpy as np

from .frames import RGBDFrame


def _coarse(rng: np.random.Generator, h: int, w: int, cell: int,
            channels: int = 3, lo: int = 0, hi: int = 256) -> np.ndarray:
    """Random texture constant over cell x cell tiles."""
    ch, cw = -(-h // cell), -(-w // cell)
    shape = (ch, cw, channels) if channels > 1 else (ch, cw)
    grid = rng.integers(lo, hi, size=shape, dtype=np.uint8)
    reps = (cell, cell, 1) if channels > 1 else (cell, cell)
    return np.kron(grid, np.ones(reps, dtype=np.uint8))[:h, :w]


def translating_clip(n_frames: int, width: int = 64, height: int = 64,
                     seed: int = 0, fps: float = 30.0, cell: int = 8,
                     shift_per_frame: tuple[int, int] = (1, 2)) -> list[RGBDFrame]:
    """Coarse texture translating uniformly; depth is a ramp sliding with it."""
    rng = np.random.default_rng(seed)
    tex = _coarse(rng, height, width, cell)
    ramp = np.linspace(40, 215, width, dtype=np.uint8)
    depth0 = np.tile(ramp, (height, 1))
    dy, dx = shift_per_frame
    frames = []
    for i in range(n_frames):
        rgb = np.roll(tex, (i * dy, i * dx), axis=(0, 1))
        depth = np.roll(depth0, (i * dy, i * dx), axis=(0, 1))
        frames.append(RGBDFrame(frame_id=i, rgb=rgb.copy(), depth=depth.copy(),
                                capture_ts=i * 1000.0 / fps))
    return frames


def talking_motion_clip(n_frames: int, width: int = 128, height: int = 128,
                        seed: int = 0, fps: float = 30.0,
                        motion_fraction: float = 0.07,
                        cell: int = 8) -> list[RGBDFrame]:
    """Static textured background with a re-texturing foreground patch.

    Roughly `motion_fraction` of each frame's area changes per frame.
    """
    rng = np.random.default_rng(seed)
    bg = _coarse(rng, height, width, cell)
    bg_depth = _coarse(rng, height, width, cell * 2, channels=1,
                       lo=180, hi=220)
    pw = max(cell, int(width * np.sqrt(motion_fraction)))
    ph = max(cell, int(height * np.sqrt(motion_fraction)))
    cy, cx = (height - ph) // 2, (width - pw) // 2
    frames = []
    for i in range(n_frames):
        jy = int(np.clip(cy + int(3 * np.sin(i / 3.0)) + int(rng.integers(-1, 2)),
                         0, height - ph))
        jx = int(np.clip(cx + int(4 * np.cos(i / 4.0)) + int(rng.integers(-1, 2)),
                         0, width - pw))
        rgb = bg.copy()
        depth = bg_depth.copy()
        rgb[jy:jy + ph, jx:jx + pw] = _coarse(rng, ph, pw, cell)
        depth[jy:jy + ph, jx:jx + pw] = _coarse(rng, ph, pw, cell * 2,
                                                channels=1, lo=60, hi=120)
        frames.append(RGBDFrame(frame_id=i, rgb=rgb, depth=depth,
                                capture_ts=i * 1000.0 / fps))
    return frames


def static_clip(n_frames: int, width: int = 64, height: int = 64,
                seed: int = 0, fps: float = 30.0, cell: int = 8) -> list[RGBDFrame]:
    rng = np.random.default_rng(seed)
    rgb = _coarse(rng, height, width, cell)
    depth = _coarse(rng, height, width, cell, channels=1)
    return [RGBDFrame(frame_id=i, rgb=rgb.copy(), depth=depth.copy(),
                      capture_ts=i * 1000.0 / fps) for i in range(n_frames)]
