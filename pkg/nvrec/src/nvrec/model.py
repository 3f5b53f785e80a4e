"""Masked-video reconstruction transformer.

The input is a short frame stack — k recent clean references followed by the
corrupted frame — plus a per-pixel corruption mask for the last frame.  Both
the visible and the corrupted pixels are embedded (masked pixels are zeroed
and flagged through an extra mask channel), so the model sees where the
holes are rather than having tokens dropped.  Attention is factorized:
spatial attention within each time slice, then temporal attention across
slices at each spatial location.  Tokens keep their natural raster order
throughout, which lets every attention call go through the fused
scaled-dot-product kernel.

The decoder is a linear head per spatio-temporal token; only the last time
slice is expanded back to pixels, yielding a reconstruction with exactly the
input frame's shape.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from .config import ModelConfig


class _Attention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.qkv = nn.Linear(dim, dim * 3)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # x: (batch, tokens, dim)
        b, t, d = x.shape
        q, k, v = self.qkv(x).reshape(b, t, 3, self.heads, d // self.heads) \
            .permute(2, 0, 3, 1, 4)
        out = F.scaled_dot_product_attention(q, k, v)
        return self.proj(out.transpose(1, 2).reshape(b, t, d))


class _Block(nn.Module):
    """Pre-norm factorized block: spatial attention, temporal attention, MLP."""

    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.norm_s = nn.LayerNorm(dim)
        self.attn_s = _Attention(dim, heads)
        self.norm_t = nn.LayerNorm(dim)
        self.attn_t = _Attention(dim, heads)
        self.norm_m = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(nn.Linear(dim, dim * 4), nn.GELU(),
                                 nn.Linear(dim * 4, dim))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # x: (batch, time, space, dim)
        b, nt, ns, d = x.shape
        s = x.reshape(b * nt, ns, d)
        s = s + self.attn_s(self.norm_s(s))
        t = s.reshape(b, nt, ns, d).transpose(1, 2).reshape(b * ns, nt, d)
        t = t + self.attn_t(self.norm_t(t))
        x = t.reshape(b, ns, nt, d).transpose(1, 2)
        return x + self.mlp(self.norm_m(x))


class MaskedVideoModel(nn.Module):
    def __init__(self, config: ModelConfig, channels: int):
        super().__init__()
        self.config = config
        self.channels = channels
        t, p, d = config.tubelet_t, config.patch, config.dim
        self.embed = nn.Conv3d(channels + 1, d, kernel_size=(t, p, p),
                               stride=(t, p, p))
        self.time_pos = nn.Parameter(
            torch.zeros(config.stack_len // t, d))
        self.blocks = nn.ModuleList(_Block(d, config.heads)
                                    for _ in range(config.layers))
        self.norm = nn.LayerNorm(d)
        self.head = nn.Linear(d, t * p * p * channels)

    def forward(self, stack: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        """Reconstruct the last frame of `stack`.

        stack: (batch, frames, channels, h, w) in [0, 1], oldest first, the
        corrupted frame last; frames may be shorter than the configured
        stack length and is front-padded by repeating the oldest frame.
        mask: (batch, h, w) bool, True where the last frame is corrupted.
        Returns (batch, channels, h, w).
        """
        cfg = self.config
        b, f, c, h, w = stack.shape
        if c != self.channels:
            raise ValueError("expected %d channels, got %d" % (self.channels, c))
        if h % cfg.patch or w % cfg.patch:
            raise ValueError("frame size must be a multiple of the patch edge")
        if f > cfg.stack_len:
            raise ValueError("stack longer than configured length")
        if f < cfg.stack_len:
            pad = stack[:, :1].expand(b, cfg.stack_len - f, c, h, w)
            stack = torch.cat((pad, stack), dim=1)
        mask_f = mask.to(stack.dtype)
        # zero out the corrupted pixels and append the mask as a channel
        # (references get an all-zero mask channel)
        chan = torch.zeros(b, cfg.stack_len, 1, h, w,
                           dtype=stack.dtype, device=stack.device)
        chan[:, -1, 0] = mask_f
        stack = stack.clone()
        stack[:, -1] = stack[:, -1] * (1.0 - mask_f[:, None])
        x = torch.cat((stack, chan), dim=2).transpose(1, 2)  # (b, c+1, F, h, w)
        x = self.embed(x)                                    # (b, d, nt, nh, nw)
        _, d, nt, nh, nw = x.shape
        x = x.reshape(b, d, nt, nh * nw).permute(0, 2, 3, 1)
        x = x + self.time_pos[:, None, :]
        for blk in self.blocks:
            x = blk(x)
        x = self.norm(x[:, -1])                              # (b, ns, d)
        out = self.head(x)                                   # (b, ns, t*p*p*c)
        p, t = cfg.patch, cfg.tubelet_t
        out = out.reshape(b, nh, nw, t, p, p, c)[:, :, :, -1]
        out = out.permute(0, 5, 1, 3, 2, 4).reshape(b, c, nh * p, nw * p)
        return torch.sigmoid(out)
