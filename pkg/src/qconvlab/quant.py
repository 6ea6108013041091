"""Symmetric per-tensor int8 quantization.

Codes are ``clamp(round_half_even(x / scale), -127, 127)`` with the zero point
fixed at 0. Scales are float32 and are never narrowed. Integer accumulators
from the int8 kernels come back to float32 only through
:func:`dequantize_accumulator`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ElemTypeError, InvalidArgumentError
from .tensor import ElemType, Tensor

QMAX = 127


@dataclass(frozen=True)
class QuantParams:
    scale: np.float32

    def __post_init__(self):
        scale = np.float32(self.scale)
        if not np.isfinite(scale) or scale <= 0:
            raise InvalidArgumentError(f"scale must be positive and finite, got {self.scale}")
        object.__setattr__(self, "scale", scale)


def _values(t) -> np.ndarray:
    return t.data if isinstance(t, Tensor) else np.asarray(t)


def scale_from_maxabs(maxabs: float) -> QuantParams:
    maxabs = np.float32(maxabs)
    if maxabs == 0:
        return QuantParams(np.float32(1.0))
    scale = np.float32(maxabs / np.float32(QMAX))
    if scale < np.finfo(np.float32).tiny and np.float64(scale) * QMAX < maxabs:
        # subnormal quotients lose relative precision; round up so maxabs still maps to <= 127
        scale = np.nextafter(scale, np.float32(np.inf))
    return QuantParams(scale)


def calibrate_maxabs(t) -> QuantParams:
    """Scale that maps the largest magnitude in ``t`` onto code 127.

    An all-zero tensor gets scale 1.0.
    """
    values = _values(t)
    if values.size == 0:
        raise InvalidArgumentError("cannot calibrate an empty tensor")
    return scale_from_maxabs(np.max(np.abs(values.astype(np.float32, copy=False))))


def quantize_array(x: np.ndarray, scale) -> np.ndarray:
    q = np.rint(x / np.float32(scale))
    return np.clip(q, -QMAX, QMAX).astype(np.int8)


def quantize(t: Tensor, qp: QuantParams) -> Tensor:
    if t.elem is not ElemType.FP32:
        raise ElemTypeError(f"quantize expects fp32 input, got {t.elem.value}")
    return Tensor(quantize_array(t.data, qp.scale), t.layout, ElemType.I8)


def dequantize(t: Tensor, qp: QuantParams) -> Tensor:
    if t.elem is not ElemType.I8:
        raise ElemTypeError(f"dequantize expects i8 input, got {t.elem.value}")
    return Tensor(t.data.astype(np.float32) * qp.scale, t.layout, ElemType.FP32)


def accumulator_scale(in_scale, w_scale) -> np.float32:
    in_scale, w_scale = np.float32(in_scale), np.float32(w_scale)
    if in_scale <= 0 or w_scale <= 0:
        raise InvalidArgumentError("scales must be positive")
    return np.float32(in_scale * w_scale)


def dequantize_accumulator(acc: Tensor, in_scale, w_scale) -> Tensor:
    if acc.elem is not ElemType.I32:
        raise ElemTypeError(f"dequantize_accumulator expects i32 input, got {acc.elem.value}")
    scale = accumulator_scale(in_scale, w_scale)
    return Tensor(acc.data.astype(np.float32) * scale, acc.layout, ElemType.FP32)


def mac_error_bound(k: int, in_scale, w_scale, max_abs_w, max_abs_x, in_error: float = 0.0) -> float:
    """Worst-case |int8 dot product - fp32 dot product| over a reduction of length k.

    Each activation is off by at most ``in_scale/2 + in_error`` after
    quantization and each weight by at most ``w_scale/2``; expanding
    ``(x + dx)(w + dw) - x w`` term by term gives the bound below. With
    ``in_error = 0`` this is ``k*(sx/2*|w| + sw/2*|x| + sx*sw/4)``.
    """
    dx = float(in_scale) / 2 + float(in_error)
    dw = float(w_scale) / 2
    return float(k) * (dx * float(max_abs_w) + dw * float(max_abs_x) + dx * dw)
