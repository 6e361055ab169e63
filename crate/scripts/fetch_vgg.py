"""Exports torchvision's ImageNet VGG16 `features` weights to safetensors.

The texture loss and LPIPS read `features.{i}.weight` / `features.{i}.bias`
with torchvision's layer indices. Requires torch, torchvision and
safetensors; the weights are downloaded by torchvision on first use.

    python scripts/fetch_vgg.py weights/vgg16.safetensors
"""

import argparse
import pathlib

import torch
from safetensors.torch import save_file
from torchvision.models import VGG16_Weights, vgg16


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("out", nargs="?", default="weights/vgg16.safetensors", type=pathlib.Path)
    args = parser.parse_args()

    model = vgg16(weights=VGG16_Weights.IMAGENET1K_V1).eval()
    tensors = {
        f"features.{name}": t.detach().to(torch.float32).contiguous()
        for name, t in model.features.state_dict().items()
    }
    args.out.parent.mkdir(parents=True, exist_ok=True)
    save_file(tensors, str(args.out))
    print(f"wrote {len(tensors)} tensors to {args.out}")


if __name__ == "__main__":
    main()
