"""Command-line entry points: pretrain, finetune, serve."""

from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from .config import LossWeights, ModelConfig
from .data import MOD_DEPTH, MOD_RGB, CorpusError, ManifestCorpus
from .server import RecoveryServer
from .train import Checkpoint, finetune, pretrain

log = logging.getLogger(__name__)

_MODALITIES = {"rgb": MOD_RGB, "depth": MOD_DEPTH}


def _model_config(args) -> ModelConfig:
    kwargs = {}
    for name in ("k", "tubelet_t", "patch", "dim", "layers", "heads", "lr"):
        val = getattr(args, name, None)
        if val is not None:
            kwargs[name] = val
    return ModelConfig(**kwargs)


def _clean_clips(manifests: list[str], modality: int) -> list[np.ndarray]:
    clips = []
    for path in manifests:
        corpus = ManifestCorpus.load(path)
        clips.append(corpus.clean_rgb if modality == MOD_RGB
                     else corpus.clean_depth[..., None])
    return clips


def _cmd_pretrain(args) -> int:
    modality = _MODALITIES[args.modality]
    cfg = _model_config(args)
    ckpt = pretrain(_clean_clips(args.manifest, modality), cfg,
                    mask_ratio=args.mask_ratio, epochs=args.epochs,
                    seed=args.seed)
    ckpt.save(args.out)
    print("pretrained %s model: %d steps, loss %.4f -> %.4f"
          % (args.modality, len(ckpt.curve), ckpt.curve[0], ckpt.curve[-1]))
    return 0


def _cmd_finetune(args) -> int:
    modality = _MODALITIES[args.modality]
    ckpt = Checkpoint.load(args.checkpoint)
    samples = []
    for path in args.manifest:
        samples.extend(ManifestCorpus.load(path).samples(modality,
                                                         ckpt.config.k))
    weights = LossWeights()
    out = finetune(ckpt, samples, weights, modality, epochs=args.epochs,
                   seed=args.seed)
    out.save(args.out)
    print("finetuned %s model on %d samples over %s epochs"
          % (args.modality, len(samples),
             "default" if args.epochs is None else args.epochs))
    return 0


def _cmd_serve(args) -> int:
    host, _, port = args.bind.rpartition(":")
    server = RecoveryServer(
        (host or "127.0.0.1", int(port)),
        checkpoint_rgb=Checkpoint.load(args.rgb) if args.rgb else None,
        checkpoint_depth=Checkpoint.load(args.depth) if args.depth else None,
        echo=args.echo)
    print("serving recovery on %s:%d" % server.addr, flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.close()
    return 0


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO)
    ap = argparse.ArgumentParser(prog="nvrec")
    sub = ap.add_subparsers(dest="cmd", required=True)

    pre = sub.add_parser("pretrain", help="self-supervised masked pretraining")
    pre.add_argument("--manifest", action="append", required=True)
    pre.add_argument("--modality", choices=_MODALITIES, required=True)
    pre.add_argument("--out", required=True)
    pre.add_argument("--epochs", type=int)
    pre.add_argument("--mask-ratio", type=float, default=0.4)
    pre.add_argument("--seed", type=int, default=0)
    for name, typ in (("k", int), ("tubelet-t", int), ("patch", int),
                      ("dim", int), ("layers", int), ("heads", int),
                      ("lr", float)):
        pre.add_argument("--" + name, type=typ)
    pre.set_defaults(fn=_cmd_pretrain)

    fin = sub.add_parser("finetune", help="adapt to real corruption triples")
    fin.add_argument("--checkpoint", required=True)
    fin.add_argument("--manifest", action="append", required=True)
    fin.add_argument("--modality", choices=_MODALITIES, required=True)
    fin.add_argument("--out", required=True)
    fin.add_argument("--epochs", type=int)
    fin.add_argument("--seed", type=int, default=0)
    fin.set_defaults(fn=_cmd_finetune)

    srv = sub.add_parser("serve", help="run the recovery server")
    srv.add_argument("--bind", required=True, help="host:port")
    srv.add_argument("--rgb", help="RGB checkpoint path")
    srv.add_argument("--depth", help="depth checkpoint path")
    srv.add_argument("--echo", action="store_true",
                     help="bypass models; return request planes unchanged")
    srv.set_defaults(fn=_cmd_serve)

    args = ap.parse_args(argv)
    try:
        return args.fn(args)
    except (CorpusError, OSError, ValueError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
