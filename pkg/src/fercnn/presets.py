"""Named reference architectures.

fer-ref-v1: four blocks of (conv3x3 same + BN + ReLU) x2 followed by 2x2
max pooling and dropout 0.25, with 64/128/256/512 channels, then a dense-256
head (BN + ReLU + dropout 0.5) and a dense-7 softmax classifier. He-normal
init for conv/dense weights, zero biases/beta, unit gamma.

fer-tiny: two single-conv blocks at 8/16 channels with a dense-32 head;
small enough for gradient checks and CPU test runs.
"""

from __future__ import annotations

import numpy as np

from .layers import (BatchNorm, Conv2D, Dense, Dropout, Flatten, MaxPool2D,
                     Model, ReLU, Softmax)
from .tensor import DEFAULT_DTYPE, Rng

INPUT_SIDE = 48
NUM_CLASSES = 7

PRESETS = {
    "fer-ref-v1": {"channels": (64, 128, 256, 512), "dense": 256, "convs_per_block": 2},
    "fer-tiny": {"channels": (8, 16), "dense": 32, "convs_per_block": 1},
}


def _conv_block(layers, in_ch, out_ch, convs, rng, dtype):
    for conv_idx in range(convs):
        layers.append(Conv2D(in_ch if conv_idx == 0 else out_ch, out_ch,
                             kernel_size=3, stride=1, padding="same",
                             rng=rng.stream("conv", len(layers)), dtype=dtype))
        layers.append(BatchNorm(out_ch, dtype=dtype))
        layers.append(ReLU())
    layers.append(MaxPool2D())
    layers.append(Dropout(0.25))


def build_model(preset: str, rng: Rng, dtype=DEFAULT_DTYPE) -> Model:
    if preset not in PRESETS:
        raise ValueError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    spec = PRESETS[preset]
    layers: list = []
    in_ch = 1
    side = INPUT_SIDE
    for out_ch in spec["channels"]:
        _conv_block(layers, in_ch, out_ch, spec["convs_per_block"], rng, dtype)
        in_ch = out_ch
        side //= 2
    flat = in_ch * side * side
    layers.append(Flatten())
    layers.append(Dense(flat, spec["dense"], rng=rng.stream("dense", len(layers)), dtype=dtype))
    layers.append(BatchNorm(spec["dense"], dtype=dtype))
    layers.append(ReLU())
    layers.append(Dropout(0.5))
    layers.append(Dense(spec["dense"], NUM_CLASSES, rng=rng.stream("dense", len(layers)), dtype=dtype))
    layers.append(Softmax())
    return Model(layers, dtype=dtype)
