"""Small named CNN presets sized so the unpruned crossbar footprint is tens
of crossbars: a VGG-style stack and a residual variant."""

from __future__ import annotations

from .nn_core import (
    Conv,
    ConvSpec,
    Flatten,
    LayerDef,
    Linear,
    MaxPool,
    ModelGraph,
    ReLU,
    ResidualAddFrom,
)


def _flat_after(in_hw: int, pools: int, channels: int) -> int:
    hw = in_hw
    for _ in range(pools):
        hw //= 2
    return channels * hw * hw


def mini_vgg(in_channels: int = 1, in_hw: int = 28, classes: int = 10) -> ModelGraph:
    """6 conv + 2 linear plain stack (8/16/32 channels, 3 pools)."""
    c = ConvSpec
    layers: list[LayerDef] = [
        Conv(c(in_channels, 8, 3, pad=1)), ReLU(),
        Conv(c(8, 8, 3, pad=1)), ReLU(), MaxPool(2, 2),
        Conv(c(8, 16, 3, pad=1)), ReLU(),
        Conv(c(16, 16, 3, pad=1)), ReLU(), MaxPool(2, 2),
        Conv(c(16, 32, 3, pad=1)), ReLU(),
        Conv(c(32, 32, 3, pad=1)), ReLU(), MaxPool(2, 2),
        Flatten(),
        Linear(_flat_after(in_hw, 3, 32), 64), ReLU(),
        Linear(64, classes),
    ]
    return ModelGraph(layers=layers)


def mini_res(in_channels: int = 1, in_hw: int = 28, classes: int = 10) -> ModelGraph:
    """8 conv with 3 element-wise skip connections and a final linear layer."""
    c = ConvSpec
    layers: list[LayerDef] = [
        Conv(c(in_channels, 8, 3, pad=1)), ReLU(),          # 0-1 stem
        Conv(c(8, 8, 3, pad=1)), ReLU(),                    # 2-3
        Conv(c(8, 8, 3, pad=1)), ResidualAddFrom(1), ReLU(),  # 4-6 block 1
        MaxPool(2, 2),                                      # 7
        Conv(c(8, 16, 3, pad=1)), ReLU(),                   # 8-9
        Conv(c(16, 16, 3, pad=1)), ReLU(),                  # 10-11
        Conv(c(16, 16, 3, pad=1)), ResidualAddFrom(9), ReLU(),  # 12-14 block 2
        MaxPool(2, 2),                                      # 15
        Conv(c(16, 32, 3, pad=1)), ReLU(),                  # 16-17
        Conv(c(32, 32, 3, pad=1)), ResidualAddFrom(17), ReLU(),  # 18-20 block 3
        MaxPool(2, 2),
        Flatten(),
        Linear(_flat_after(in_hw, 3, 32), classes),
    ]
    return ModelGraph(layers=layers)


PRESETS = {"mini-vgg": mini_vgg, "mini-res": mini_res}


def build_preset(name: str, in_channels: int, in_hw: int, classes: int = 10) -> ModelGraph:
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return PRESETS[name](in_channels, in_hw, classes)
