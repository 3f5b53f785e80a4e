"""Two-stage training: self-supervised pretraining on clean clips with
synthetic masks, then finetuning on real corruption triples exported by the
streaming pipeline, with the per-modality objective."""

from __future__ import annotations

import copy
import os
from dataclasses import dataclass, field

import numpy as np
import torch

from .config import LossWeights, ModelConfig
from .data import MOD_RGB, CorpusError, Sample, pretrain_samples
from .losses import depth_loss, reconstruction_loss, rgb_loss
from .model import MaskedVideoModel


@dataclass
class Checkpoint:
    config: ModelConfig
    channels: int
    state: dict
    curve: list[float] = field(default_factory=list)
    stage: str = "init"

    def save(self, path: str | os.PathLike) -> None:
        torch.save({"config": vars(self.config), "channels": self.channels,
                    "state": self.state, "curve": self.curve,
                    "stage": self.stage}, os.fspath(path))

    @classmethod
    def load(cls, path: str | os.PathLike) -> "Checkpoint":
        blob = torch.load(os.fspath(path), weights_only=False)
        return cls(config=ModelConfig(**blob["config"]),
                   channels=blob["channels"], state=blob["state"],
                   curve=blob["curve"], stage=blob["stage"])

    def build_model(self) -> MaskedVideoModel:
        model = MaskedVideoModel(self.config, self.channels)
        model.load_state_dict(self.state)
        return model


def _batch(sample: Sample):
    refs = torch.from_numpy(sample.references).permute(0, 3, 1, 2)
    cor = torch.from_numpy(sample.corrupted).permute(2, 0, 1)
    stack = torch.cat((refs, cor[None]), dim=0)[None]
    mask = torch.from_numpy(np.ascontiguousarray(sample.mask))[None]
    target = torch.from_numpy(sample.target).permute(2, 0, 1)[None]
    return stack, mask, target


def _train_steps(model, samples, loss_fn, epochs, lr, seed):
    rng = np.random.default_rng(seed)
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    curve = []
    for _ in range(epochs):
        for i in rng.permutation(len(samples)):
            stack, mask, target = _batch(samples[i])
            opt.zero_grad()
            loss = loss_fn(model(stack, mask), target)
            loss.backward()
            opt.step()
            curve.append(float(loss.detach()))
    return curve


def pretrain(clips: list[np.ndarray], config: ModelConfig,
             mask_ratio: float = 0.4, epochs: int | None = None,
             seed: int = 0) -> Checkpoint:
    """Self-supervised masked reconstruction on clean clips.

    `clips` are uint8 arrays (frames, h, w[, c]); every clip must share the
    channel count.  Returns a checkpoint with the per-step loss curve.
    """
    if not clips:
        raise CorpusError("empty corpus")
    channels = clips[0].shape[3] if clips[0].ndim == 4 else 1
    for c in clips:
        if (c.shape[3] if c.ndim == 4 else 1) != channels:
            raise CorpusError("mixed channel counts in corpus")
    rng = np.random.default_rng(seed)
    samples = pretrain_samples(clips, config.k, mask_ratio, rng)
    torch.manual_seed(seed)
    model = MaskedVideoModel(config, channels)
    epochs = config.epochs_pretrain if epochs is None else epochs
    curve = _train_steps(model, samples,
                         lambda p, t: reconstruction_loss(p, t),
                         epochs, config.lr, seed)
    return Checkpoint(config=config, channels=channels,
                      state=model.state_dict(), curve=curve, stage="pretrain")


def finetune(checkpoint: Checkpoint, samples: list[Sample],
             weights: LossWeights, modality: int,
             epochs: int | None = None, seed: int = 0,
             objective: str | None = None) -> Checkpoint:
    """Adapt a pretrained checkpoint to real corruption with the modality's
    objective.  Zero epochs returns an identical copy of the checkpoint.

    `objective` ("rgb" or "depth") overrides the objective implied by the
    modality — used to ablate one modality's loss on the other's data."""
    channels = 3 if modality == MOD_RGB else 1
    if checkpoint.channels != channels:
        raise CorpusError("checkpoint has %d channels, modality needs %d"
                          % (checkpoint.channels, channels))
    epochs = checkpoint.config.epochs_finetune if epochs is None else epochs
    if epochs == 0:
        return Checkpoint(config=checkpoint.config, channels=channels,
                          state=copy.deepcopy(checkpoint.state),
                          curve=[], stage="finetune")
    if not samples:
        raise CorpusError("no corrupted samples to finetune on")
    for s in samples:
        if s.corrupted.shape[2] != channels:
            raise CorpusError("sample channels do not match modality")
    model = checkpoint.build_model()
    torch.manual_seed(seed)
    if objective is None:
        objective = "rgb" if modality == MOD_RGB else "depth"
    if objective not in ("rgb", "depth"):
        raise ValueError("objective must be 'rgb' or 'depth'")
    loss_fn = (lambda p, t: rgb_loss(p, t, weights)) if objective == "rgb" \
        else (lambda p, t: depth_loss(p, t, weights))
    curve = _train_steps(model, samples, loss_fn, epochs,
                         checkpoint.config.lr, seed)
    return Checkpoint(config=checkpoint.config, channels=channels,
                      state=model.state_dict(), curve=curve, stage="finetune")
