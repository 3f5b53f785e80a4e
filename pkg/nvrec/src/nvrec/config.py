"""Model and training hyperparameters."""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass(frozen=True)
class ModelConfig:
    """Architecture and optimization settings shared by pretraining and
    finetuning: the encoder-decoder shape must not change between stages,
    or the finetune cannot start from the pretrained weights."""

    k: int = 5                  # reference frames fed alongside the corrupted one
    tubelet_t: int = 2          # frames per temporal token
    patch: int = 16             # spatial patch edge (matches the loss-mask grid)
    dim: int = 64
    layers: int = 2
    heads: int = 2
    epochs_pretrain: int = 40
    epochs_finetune: int = 20
    lr: float = 2e-4

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.tubelet_t < 1:
            raise ValueError("tubelet_t must be >= 1")
        if self.patch < 1 or self.dim < 1 or self.layers < 1 or self.heads < 1:
            raise ValueError("architecture sizes must be positive")
        if self.dim % self.heads:
            raise ValueError("dim must be divisible by heads")
        if self.lr <= 0:
            raise ValueError("lr must be positive")

    @property
    def stack_len(self) -> int:
        """Temporal input length: k references + the corrupted frame, padded
        up to a tubelet multiple."""
        raw = self.k + 1
        return raw + (-raw) % self.tubelet_t


@dataclass(frozen=True)
class LossWeights:
    """Per-modality objective weights.

    RGB: reconstruction + rgb_alpha * structural term.
    Depth: depth_alpha_r * reconstruction + depth_alpha_e * edge agreement
    + depth_alpha_s * edge-aware smoothness.
    """

    rgb_alpha: float = 0.01
    depth_alpha_r: float = 0.1
    depth_alpha_e: float = 1.0
    depth_alpha_s: float = 1.0

    def __post_init__(self):
        for name in ("rgb_alpha", "depth_alpha_r", "depth_alpha_e",
                     "depth_alpha_s"):
            if getattr(self, name) < 0:
                raise ValueError("%s must be >= 0" % name)
