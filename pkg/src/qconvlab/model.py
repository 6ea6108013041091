"""Desk-scale residual CNN fixtures in the shape of ResNet-18.

stem conv3x3 -> relu -> stages of basic blocks -> global average pool -> dense.
A basic block is conv-relu-conv plus a shortcut, then add and relu. The first
block of every stage after the first halves the spatial size; it uses 2x2
stride-2 convolutions (main path and projection) so every output extent is
exact. Projections are inserted whenever the shortcut changes shape.
No batch norm, no biases.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .errors import InvalidArgumentError
from .graph import GraphIR, Op
from .kernels import ScheduleKind
from .tensor import NCHW, NHWC, ElemType, Layout

WEIGHT_RANGE = 0.5

DEFAULT_SCHEDULES = {
    NCHW: ScheduleKind.NCHW_SPATIAL_PACK_FP32,
    NHWC: ScheduleKind.NHWC_SPATIAL_PACK_FP32,
}


@dataclass(frozen=True)
class MiniResNetConfig:
    stem_channels: int = 16
    stage_multipliers: Tuple[int, ...] = (1, 2)
    blocks_per_stage: int = 2
    input_size: int = 32
    input_channels: int = 3
    num_classes: int = 10
    seed: int = 0

    def validate(self) -> None:
        if min(self.stem_channels, self.input_channels, self.num_classes, self.input_size) <= 0:
            raise InvalidArgumentError("channel counts and input size must be positive")
        if not self.stage_multipliers or min(self.stage_multipliers) <= 0:
            raise InvalidArgumentError("stage multipliers must be positive")
        if self.blocks_per_stage < 0:
            raise InvalidArgumentError("blocks_per_stage must be non-negative")
        if self.input_size % self.total_stride:
            raise InvalidArgumentError(
                f"input size {self.input_size} not divisible by total stride {self.total_stride}"
            )

    @property
    def total_stride(self) -> int:
        if self.blocks_per_stage == 0:
            return 1
        return 2 ** (len(self.stage_multipliers) - 1)

    def conv_count(self) -> int:
        """Convolutions the builder emits: stem, two per block, plus projections."""
        count = 1 + 2 * self.blocks_per_stage * len(self.stage_multipliers)
        if self.blocks_per_stage:
            channels = self.stem_channels
            for i, mult in enumerate(self.stage_multipliers):
                if i > 0 or channels != self.stem_channels * mult:
                    count += 1
                channels = self.stem_channels * mult
        return count


def build_mini_resnet(
    cfg: MiniResNetConfig = MiniResNetConfig(),
    layout: Layout = NCHW,
    batch: int = 1,
    schedule: ScheduleKind = None,
) -> GraphIR:
    cfg.validate()
    if layout not in DEFAULT_SCHEDULES:
        raise InvalidArgumentError(f"mini-resnet supports NCHW and NHWC, not {layout}")
    if batch <= 0:
        raise InvalidArgumentError("batch must be positive")
    schedule = schedule or DEFAULT_SCHEDULES[layout]
    if schedule.layout != layout or schedule.precision is not ElemType.FP32:
        raise InvalidArgumentError(f"{schedule.value} is not an fp32 {layout} schedule")

    rng = np.random.default_rng(cfg.seed)
    g = GraphIR()
    s = cfg.input_size
    shape = (batch, cfg.input_channels, s, s) if layout == NCHW else (batch, s, s, cfg.input_channels)
    x = g.add_input(shape, ElemType.FP32, layout)

    def conv(src, c_in, c_out, k, stride, pad):
        w = rng.uniform(-WEIGHT_RANGE, WEIGHT_RANGE, size=(c_out, c_in, k, k)).astype(np.float32)
        return g.add(Op.CONV2D, [src], weight=w, stride=stride, padding=pad, schedule=schedule)

    h = g.add(Op.RELU, [conv(x, cfg.input_channels, cfg.stem_channels, 3, 1, 1)])
    channels = cfg.stem_channels
    for stage, mult in enumerate(cfg.stage_multipliers):
        out_ch = cfg.stem_channels * mult
        for block in range(cfg.blocks_per_stage):
            down = stage > 0 and block == 0
            if down:
                y = conv(h, channels, out_ch, 2, 2, 0)
            else:
                y = conv(h, channels, out_ch, 3, 1, 1)
            y = conv(g.add(Op.RELU, [y]), out_ch, out_ch, 3, 1, 1)
            if down:
                shortcut = conv(h, channels, out_ch, 2, 2, 0)
            elif channels != out_ch:
                shortcut = conv(h, channels, out_ch, 1, 1, 0)
            else:
                shortcut = h
            h = g.add(Op.RELU, [g.add(Op.ADD, [y, shortcut])])
            channels = out_ch
    pooled = g.add(Op.GLOBAL_AVG_POOL, [h])
    w = rng.uniform(-WEIGHT_RANGE, WEIGHT_RANGE, size=(cfg.num_classes, channels)).astype(np.float32)
    g.outputs = [g.add(Op.DENSE, [pooled], weight=w)]
    return g


def synthetic_batch(cfg: MiniResNetConfig, layout: Layout, batch: int, rng: np.random.Generator) -> np.ndarray:
    """Seeded stand-in for a batch of validation images, in ``layout``."""
    x = rng.standard_normal((batch, cfg.input_channels, cfg.input_size, cfg.input_size)).astype(np.float32)
    return np.ascontiguousarray(x.transpose(0, 2, 3, 1)) if layout == NHWC else x
