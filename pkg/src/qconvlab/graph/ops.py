"""Per-node evaluation shared by the interpreter and both executors."""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .. import kernels, quant
from ..tensor import NC, NCHW, OIHW, ElemType, Tensor
from .ir import Node, Op, ValueInfo


def prepack(node: Node) -> Optional[kernels.PackedWeight]:
    if node.op is Op.CONV2D:
        return kernels.prepack_weight(node.attrs["schedule"], Tensor.from_array(node.weight, OIHW))
    return None


def evaluate(node: Node, args: Sequence[np.ndarray], in_infos: Sequence[ValueInfo], packed=None) -> np.ndarray:
    """Compute ``node`` on raw buffers; returns a fresh array."""
    op, attrs = node.op, node.attrs
    if op is Op.CONV2D:
        x = Tensor(args[0], in_infos[0].layout, in_infos[0].elem)
        w = Tensor.from_array(node.weight, OIHW)
        return kernels.conv2d(x, w, node.conv_spec(), attrs["schedule"], packed=packed).data
    if op is Op.DENSE:
        x = Tensor(args[0], NC, in_infos[0].elem)
        w = Tensor.from_array(node.weight, NC)
        fn = kernels.dense_i8 if x.elem is ElemType.I8 else kernels.dense_f32
        return fn(x, w).data
    if op is Op.ADD:
        return args[0] + args[1]
    if op is Op.RELU:
        return np.maximum(args[0], np.float32(0))
    if op is Op.GLOBAL_AVG_POOL:
        axes = (2, 3) if in_infos[0].layout == NCHW else (1, 2)
        return args[0].mean(axis=axes, dtype=np.float32)
    if op is Op.QUANTIZE:
        return quant.quantize_array(args[0], attrs["scale"])
    if op is Op.DEQUANTIZE:
        return args[0].astype(np.float32) * np.float32(attrs["scale"])
    if op is Op.DEQUANT_ACC:
        scale = quant.accumulator_scale(attrs["in_scale"], attrs["w_scale"])
        return args[0].astype(np.float32) * scale
    raise ValueError(f"unhandled op {op}")  # pragma: no cover
