#!/usr/bin/env python3
"""Convert a PyTorch ViT-S/8 self-distillation checkpoint to backbone safetensors.

Usage: convert_dino_checkpoint.py dino_deitsmall8_pretrain.pth backbone.safetensors

Requires torch and safetensors. Accepts plain state dicts and full training
checkpoints (the "teacher" weights are used when present).
"""
import argparse
import sys

import torch
from safetensors.torch import save_file

PREFIXES = ("module.", "backbone.")
ARCH = {
    "arch.image_size": "224",
    "arch.patch_size": "8",
    "arch.depth": "12",
    "arch.heads": "6",
    "arch.d_m": "384",
    "arch.mlp_hidden": "1536",
}


def strip(name):
    changed = True
    while changed:
        changed = False
        for p in PREFIXES:
            if name.startswith(p):
                name = name[len(p):]
                changed = True
    return name


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("src")
    ap.add_argument("dst")
    ap.add_argument("--key", default=None, help="sub-dictionary to read (default: teacher, else the whole file)")
    args = ap.parse_args()

    state = torch.load(args.src, map_location="cpu")
    key = args.key or ("teacher" if isinstance(state, dict) and "teacher" in state else None)
    if key is not None:
        state = state[key]
    out = {}
    for name, tensor in state.items():
        name = strip(name)
        if name.startswith("head.") or not torch.is_tensor(tensor):
            continue
        out[name] = tensor.detach().to(torch.float32).contiguous()
    if "pos_embed" not in out:
        sys.exit("no pos_embed in %s; not a ViT checkpoint?" % args.src)
    grid = out["pos_embed"].shape[1] - 1
    if grid != 28 * 28:
        sys.exit("pos_embed has %d patch positions, expected 784 (ViT-S/8 at 224)" % grid)
    metadata = dict(ARCH, provenance="pretrained")
    save_file(out, args.dst, metadata=metadata)
    print("wrote %d tensors to %s" % (len(out), args.dst))


if __name__ == "__main__":
    main()
