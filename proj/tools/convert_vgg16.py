#!/usr/bin/env python3
"""Write torchvision VGG16 conv weights into a haf parameter archive."""
import argparse
import json
import struct

import torch
import torchvision

CONV_NAMES = ["conv1_1", "conv1_2", "conv2_1", "conv2_2", "conv3_1", "conv3_2", "conv3_3",
              "conv4_1", "conv4_2", "conv4_3", "conv5_1", "conv5_2", "conv5_3"]


def write_archive(path, tensors, metadata):
    meta = metadata.encode("utf-8")
    names = sorted(tensors)
    with open(path, "wb") as f:
        f.write(b"HAFPARAM")
        f.write(struct.pack("<IIQ", 1, len(names), len(meta)))
        f.write(meta)
        for name in names:
            t = tensors[name]
            encoded = name.encode("utf-8")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<BI", 0, t.dim()))
            f.write(struct.pack("<%dq" % t.dim(), *t.shape))
        for name in names:
            f.write(tensors[name].detach().to(torch.float32).contiguous().numpy().tobytes())


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("output")
    parser.add_argument("--random", action="store_true",
                        help="skip the ImageNet download and export an untrained network")
    args = parser.parse_args()
    weights = None if args.random else torchvision.models.VGG16_Weights.IMAGENET1K_V1
    model = torchvision.models.vgg16(weights=weights)
    convs = [m for m in model.features if isinstance(m, torch.nn.Conv2d)]
    assert len(convs) == len(CONV_NAMES)
    tensors = {}
    for name, conv in zip(CONV_NAMES, convs):
        tensors[name + ".weight"] = conv.weight
        tensors[name + ".bias"] = conv.bias
    source = "untrained" if args.random else "torchvision IMAGENET1K_V1"
    write_archive(args.output, tensors, json.dumps({"model": "vgg16", "weights": source}))


if __name__ == "__main__":
    main()
