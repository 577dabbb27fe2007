#!/usr/bin/env python3
"""Write torchvision VGG-16 conv weights in the archive layout the C++ perceptual loss reads.

Usage: export_vgg16.py OUT.pt [--state-dict vgg16.pth] [--random]
"""
import argparse

import torch
import torchvision


class Weights(torch.nn.Module):
    def __init__(self, tensors):
        super().__init__()
        for key, value in tensors.items():
            self.register_buffer(key, value.detach().clone().float())

    def forward(self):
        return 0


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("out")
    parser.add_argument("--state-dict", help="local torchvision vgg16 state dict instead of the download")
    parser.add_argument("--random", action="store_true", help="untrained weights, for plumbing checks only")
    args = parser.parse_args()

    if args.random:
        model = torchvision.models.vgg16(weights=None)
    elif args.state_dict:
        model = torchvision.models.vgg16(weights=None)
        model.load_state_dict(torch.load(args.state_dict, map_location="cpu"))
    else:
        model = torchvision.models.vgg16(weights=torchvision.models.VGG16_Weights.IMAGENET1K_V1)

    tensors = {}
    for index, layer in enumerate(model.features):
        if isinstance(layer, torch.nn.Conv2d):
            tensors[f"features_{index}_weight"] = layer.weight
            tensors[f"features_{index}_bias"] = layer.bias
    torch.jit.script(Weights(tensors)).save(args.out)
    print(f"wrote {len(tensors) // 2} conv layers to {args.out}")


if __name__ == "__main__":
    main()
