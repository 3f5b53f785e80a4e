"""Learned recovery of block-corrupted RGB-D video.

Trains masked-video reconstruction models (separate RGB and depth heads of
the same architecture) and serves them over the recovery wire protocol used
by the streaming receiver.
"""

from .config import LossWeights, ModelConfig
from .model import MaskedVideoModel

__all__ = ["LossWeights", "ModelConfig", "MaskedVideoModel"]
