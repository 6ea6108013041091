"""Brute-force reference convolutions and the randomized consensus suite.

Nothing here shares code with :mod:`qconvlab.kernels`; these are the second,
deliberately naive implementations every schedule is checked against.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List

import numpy as np

from . import kernels
from .kernels import ConvSpec, ScheduleKind
from .tensor import NCHW, OIHW, Tensor, transpose_nchw_nhwc

FP32_RTOL = 1e-5


def conv2d_bruteforce_i32(x: np.ndarray, w: np.ndarray, stride: int, padding: int) -> np.ndarray:
    """Integer NCHW convolution, one output pixel at a time, in int64."""
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (wd + 2 * padding - kw) // stride + 1
    xp = np.zeros((n, c, h + 2 * padding, wd + 2 * padding), dtype=np.int64)
    xp[:, :, padding:padding + h, padding:padding + wd] = x
    w64 = w.astype(np.int64)
    out = np.empty((n, o, oh, ow), dtype=np.int64)
    for y in range(oh):
        for xx in range(ow):
            patch = xp[:, :, y * stride:y * stride + kh, xx * stride:xx * stride + kw]
            out[:, :, y, xx] = np.einsum("nckl,ockl->no", patch, w64)
    return out.astype(np.int32)


def conv2d_scalar_f32(x: np.ndarray, w: np.ndarray, stride: int, padding: int) -> np.ndarray:
    """Six nested Python loops, fp32 accumulation in (c, kh, kw) order. Tiny inputs only."""
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (wd + 2 * padding - kw) // stride + 1
    out = np.zeros((n, o, oh, ow), dtype=np.float32)
    for b in range(n):
        for oc in range(o):
            for y in range(oh):
                for xx in range(ow):
                    acc = np.float32(0)
                    for ic in range(c):
                        for i in range(kh):
                            for j in range(kw):
                                yy, xj = y * stride + i - padding, xx * stride + j - padding
                                if 0 <= yy < h and 0 <= xj < wd:
                                    acc = np.float32(acc + np.float32(x[b, ic, yy, xj] * w[oc, ic, i, j]))
                    out[b, oc, y, xx] = acc
    return out


@dataclass(frozen=True)
class ConvCase:
    n: int
    c: int
    o: int
    h: int
    w: int
    k: int
    stride: int
    padding: int

    @property
    def spec(self) -> ConvSpec:
        return ConvSpec(self.stride, self.padding, self.k, self.k, self.c, self.o)


def random_case(rng: np.random.Generator, max_channels: int = 32, max_spatial: int = 32) -> ConvCase:
    """Random geometry with an exact output extent."""
    stride = int(rng.choice([1, 2]))
    padding = int(rng.choice([0, 1]))
    k = int(rng.choice([1, 2, 3]))
    sizes = [s for s in range(max(k, 2), max_spatial + 1) if (s + 2 * padding - k) % stride == 0]
    h = int(rng.choice(sizes))
    w = int(rng.choice(sizes))
    return ConvCase(
        n=int(rng.integers(1, 3)),
        c=int(rng.integers(3, max_channels + 1)),
        o=int(rng.integers(3, max_channels + 1)),
        h=h, w=w, k=k, stride=stride, padding=padding,
    )


def random_codes(rng: np.random.Generator, shape) -> np.ndarray:
    return rng.integers(-127, 128, size=shape).astype(np.int8)


def int8_schedule_outputs(x: np.ndarray, w: np.ndarray, spec: ConvSpec) -> dict:
    """I32 NCHW outputs of every int8 schedule on the same codes."""
    xt = Tensor.from_array(x, NCHW)
    wt = Tensor.from_array(w, OIHW)
    xh = transpose_nchw_nhwc(xt)
    return {
        ScheduleKind.NCHW_SPATIAL_PACK_I8: kernels.conv2d(xt, wt, spec, ScheduleKind.NCHW_SPATIAL_PACK_I8).data,
        ScheduleKind.NCHW_SIMD_I8: kernels.conv2d(xt, wt, spec, ScheduleKind.NCHW_SIMD_I8).data,
        ScheduleKind.NHWC_QUANTIZED_INTERLEAVED_I8: transpose_nchw_nhwc(
            kernels.conv2d(xh, wt, spec, ScheduleKind.NHWC_QUANTIZED_INTERLEAVED_I8)
        ).data,
    }


def fp32_schedule_outputs(x: np.ndarray, w: np.ndarray, spec: ConvSpec) -> dict:
    xt = Tensor.from_array(x, NCHW)
    wt = Tensor.from_array(w, OIHW)
    return {
        ScheduleKind.NCHW_SPATIAL_PACK_FP32: kernels.conv2d(xt, wt, spec, ScheduleKind.NCHW_SPATIAL_PACK_FP32).data,
        ScheduleKind.NHWC_SPATIAL_PACK_FP32: transpose_nchw_nhwc(
            kernels.conv2d(transpose_nchw_nhwc(xt), wt, spec, ScheduleKind.NHWC_SPATIAL_PACK_FP32)
        ).data,
    }


def max_relative_error(actual: np.ndarray, reference: np.ndarray) -> float:
    """max |actual - reference| / max |reference| (0 when both vanish)."""
    scale = float(np.max(np.abs(reference))) if reference.size else 0.0
    diff = float(np.max(np.abs(actual.astype(np.float64) - reference))) if reference.size else 0.0
    if scale == 0.0:
        return diff
    return diff / scale


def consensus_suite(cases: int = 100, seed: int = 0) -> List[str]:
    """Run every schedule on ``cases`` random convolutions; return mismatch reports."""
    rng = np.random.default_rng(seed)
    failures = []
    for i in range(cases):
        case = random_case(rng)
        spec = case.spec
        xq = random_codes(rng, (case.n, case.c, case.h, case.w))
        wq = random_codes(rng, (case.o, case.c, case.k, case.k))
        expected = conv2d_bruteforce_i32(xq, wq, case.stride, case.padding)
        for kind, got in int8_schedule_outputs(xq, wq, spec).items():
            if got.shape != expected.shape or not np.array_equal(got, expected):
                failures.append(f"case {i} {case}: {kind.value} disagrees with the integer oracle")
        xf = rng.standard_normal((case.n, case.c, case.h, case.w)).astype(np.float32)
        wf = rng.standard_normal((case.o, case.c, case.k, case.k)).astype(np.float32)
        ref = kernels.conv2d_direct_f32(Tensor.from_array(xf, NCHW), Tensor.from_array(wf, OIHW), spec).data
        for kind, got in fp32_schedule_outputs(xf, wf, spec).items():
            err = max_relative_error(got, ref)
            if got.shape != ref.shape or err > FP32_RTOL:
                failures.append(f"case {i} {case}: {kind.value} relative error {err:.3g}")
    return failures
