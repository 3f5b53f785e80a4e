"""Training objectives.

RGB frames are scored by reconstruction error plus a small structural
(SSIM-based) term.  Depth maps get a three-term objective: reconstruction,
agreement of finite-difference gradients (edges), and an edge-aware
smoothness prior that lets the prediction stay flat except where the target
itself has depth discontinuities.  All terms are differentiable.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F

from .config import LossWeights

_C1 = 0.01 ** 2
_C2 = 0.03 ** 2


def ssim(pred: torch.Tensor, target: torch.Tensor, window: int = 8) -> torch.Tensor:
    """Mean single-scale SSIM over valid windows; inputs (b, c, h, w) in [0, 1]."""
    window = min(window, pred.shape[-2], pred.shape[-1])
    mu_p = F.avg_pool2d(pred, window, stride=1)
    mu_t = F.avg_pool2d(target, window, stride=1)
    var_p = F.avg_pool2d(pred * pred, window, stride=1) - mu_p ** 2
    var_t = F.avg_pool2d(target * target, window, stride=1) - mu_t ** 2
    cov = F.avg_pool2d(pred * target, window, stride=1) - mu_p * mu_t
    num = (2 * mu_p * mu_t + _C1) * (2 * cov + _C2)
    den = (mu_p ** 2 + mu_t ** 2 + _C1) * (var_p + var_t + _C2)
    return (num / den).mean()


def reconstruction_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    return (pred - target).abs().mean()


def edge_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """L1 distance between the finite-difference gradients of pred and target."""
    dpx = pred[..., :, 1:] - pred[..., :, :-1]
    dtx = target[..., :, 1:] - target[..., :, :-1]
    dpy = pred[..., 1:, :] - pred[..., :-1, :]
    dty = target[..., 1:, :] - target[..., :-1, :]
    return (dpx - dtx).abs().mean() + (dpy - dty).abs().mean()


def smoothness_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Penalize prediction gradients away from target edges."""
    dpx = (pred[..., :, 1:] - pred[..., :, :-1]).abs()
    dpy = (pred[..., 1:, :] - pred[..., :-1, :]).abs()
    wx = torch.exp(-(target[..., :, 1:] - target[..., :, :-1]).abs() * 10.0)
    wy = torch.exp(-(target[..., 1:, :] - target[..., :-1, :]).abs() * 10.0)
    return (dpx * wx).mean() + (dpy * wy).mean()


def rgb_loss(pred: torch.Tensor, target: torch.Tensor,
             weights: LossWeights) -> torch.Tensor:
    return reconstruction_loss(pred, target) \
        + weights.rgb_alpha * (1.0 - ssim(pred, target))


def depth_loss(pred: torch.Tensor, target: torch.Tensor,
               weights: LossWeights) -> torch.Tensor:
    return weights.depth_alpha_r * reconstruction_loss(pred, target) \
        + weights.depth_alpha_e * edge_loss(pred, target) \
        + weights.depth_alpha_s * smoothness_loss(pred, target)
