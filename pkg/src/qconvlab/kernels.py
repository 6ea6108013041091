"""Conv2d schedules and the integer micro-kernels they are built from.

Every schedule computes the same cross-correlation

    out[n, o, y, x] = sum_{c, kh, kw} in[n, c, y*s + kh - p, x*s + kw - p] * w[o, c, kh, kw]

and differs only in data layout, loop blocking and inner-product primitive:

==============================  ======  =================================================
schedule                        layout  structure
==============================  ======  =================================================
nchw_spatial_pack (fp32/i8)     NCHW    NCHW16c blocks, output rows in groups of 4
nchw_simd_i8                    NCHW    ``dot4_i8`` over 4-channel chunks
nhwc_spatial_pack_fp32          NHWC    WC-fused rows, groups of 4 rows, no channel blocks
nhwc_quantized_interleaved_i8   NHWC    im2col panels of 4 pixels x K, ``mmla_4x4_i8``
direct_fp32_reference           NCHW    fixed (c, kh, kw) accumulation, the oracle
==============================  ======  =================================================

Int8 schedules take int8 codes and return exact int32 accumulators, so they
agree bit-for-bit with each other. Float schedules reassociate the reduction
and are held to a tolerance against the direct reference.
"""

from __future__ import annotations

import enum
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, Optional

import numpy as np

from .errors import ElemTypeError, InvalidArgumentError, InvalidSpecError, LayoutMismatchError, ShapeError
from .tensor import (
    DEFAULT_BLOCK,
    NC,
    NCHW,
    NHWC,
    OIHW,
    ElemType,
    Layout,
    Tensor,
    pack_interleaved_panels,
    pack_nchw_to_nchwc,
    pack_nhwc_wc,
    unpack_nchwc_to_nchw,
)

ROW_GROUP = 4  # output rows handled together by the spatial-pack/simd schedules
DOT_LANES = 4  # int8 pairs per widening dot product
PANEL_ROWS = 4  # rows per interleaved panel (both operands)
PANELS_PER_CHUNK = 64  # bounds the interleaved im2col workspace


class ScheduleKind(enum.Enum):
    NCHW_SPATIAL_PACK_FP32 = "nchw_spatial_pack_fp32"
    NCHW_SPATIAL_PACK_I8 = "nchw_spatial_pack_i8"
    NCHW_SIMD_I8 = "nchw_simd_i8"
    NHWC_SPATIAL_PACK_FP32 = "nhwc_spatial_pack_fp32"
    NHWC_QUANTIZED_INTERLEAVED_I8 = "nhwc_quantized_interleaved_i8"
    DIRECT_FP32_REFERENCE = "direct_fp32_reference"

    @property
    def layout(self):
        return NHWC if self.value.startswith("nhwc") else NCHW

    @property
    def precision(self) -> ElemType:
        return ElemType.I8 if self.value.endswith("_i8") else ElemType.FP32


INT8_COUNTERPART = {
    ScheduleKind.NCHW_SPATIAL_PACK_FP32: ScheduleKind.NCHW_SPATIAL_PACK_I8,
    ScheduleKind.DIRECT_FP32_REFERENCE: ScheduleKind.NCHW_SPATIAL_PACK_I8,
    ScheduleKind.NHWC_SPATIAL_PACK_FP32: ScheduleKind.NHWC_QUANTIZED_INTERLEAVED_I8,
}


@dataclass(frozen=True)
class ConvSpec:
    stride: int
    padding: int
    kh: int
    kw: int
    c: int
    o: int

    def __post_init__(self):
        if self.stride <= 0 or self.padding < 0:
            raise InvalidSpecError(f"bad stride/padding {self.stride}/{self.padding}")
        if min(self.kh, self.kw, self.c, self.o) <= 0:
            raise InvalidSpecError("kernel and channel extents must be positive")

    @classmethod
    def from_weight(cls, weight_shape, stride: int = 1, padding: int = 0) -> "ConvSpec":
        o, c, kh, kw = weight_shape
        return cls(stride, padding, kh, kw, c, o)

    def output_hw(self, h: int, w: int) -> tuple:
        out = []
        for extent, k in ((h, self.kh), (w, self.kw)):
            span = extent + 2 * self.padding - k
            if span < 0 or span % self.stride:
                raise InvalidSpecError(
                    f"extent {extent} with kernel {k}, pad {self.padding}, stride {self.stride} "
                    "does not give an integral output size"
                )
            out.append(span // self.stride + 1)
        return tuple(out)

    @property
    def reduction_length(self) -> int:
        return self.c * self.kh * self.kw


def _check_conv(input: Tensor, weight: Tensor, spec: ConvSpec, layout, elems) -> tuple:
    if input.layout != layout:
        raise LayoutMismatchError(f"expected {layout} input, got {input.layout}")
    if weight.layout != OIHW:
        raise LayoutMismatchError(f"expected OIHW weight, got {weight.layout}")
    if input.elem not in elems or weight.elem is not input.elem:
        raise ElemTypeError(f"unsupported element types {input.elem.value}/{weight.elem.value}")
    if weight.shape != (spec.o, spec.c, spec.kh, spec.kw):
        raise ShapeError(f"weight shape {weight.shape} does not match {spec}")
    if layout == NCHW:
        n, c, h, w = input.shape
    else:
        n, h, w, c = input.shape
    if c != spec.c:
        raise ShapeError(f"input has {c} channels, spec expects {spec.c}")
    oh, ow = spec.output_hw(h, w)
    return n, h, w, oh, ow


def _row_groups(oh: int) -> list:
    return [range(y, min(y + ROW_GROUP, oh)) for y in range(0, oh, ROW_GROUP)]


def _run_groups(fn: Callable, groups: Iterable, workers: int) -> None:
    # each group writes a disjoint slice of the output
    if workers <= 1:
        for g in groups:
            fn(g)
        return
    with ThreadPoolExecutor(max_workers=workers) as pool:
        list(pool.map(fn, groups))


def _taps(xp: np.ndarray, h_axis: int, rows: range, kh: int, kw: int, ow: int, stride: int) -> np.ndarray:
    """Input window feeding output rows ``rows`` at kernel offset (kh, kw)."""
    ys = slice(rows.start * stride + kh, (rows.stop - 1) * stride + kh + 1, stride)
    xs = slice(kw, kw + (ow - 1) * stride + 1, stride)
    index = [slice(None)] * xp.ndim
    index[h_axis], index[h_axis + 1] = ys, xs
    return xp[tuple(index)]


# --------------------------------------------------------------------------
# reference


def conv2d_direct_f32(input: Tensor, weight: Tensor, spec: ConvSpec) -> Tensor:
    """Textbook convolution; each output accumulates in (c, kh, kw) order in fp32."""
    n, h, w, oh, ow = _check_conv(input, weight, spec, NCHW, (ElemType.FP32,))
    p, s = spec.padding, spec.stride
    xp = np.pad(input.data, ((0, 0), (0, 0), (p, p), (p, p)))
    wt = weight.data
    out = np.zeros((n, spec.o, oh, ow), dtype=np.float32)
    rows = range(oh)
    for c in range(spec.c):
        for kh in range(spec.kh):
            for kw in range(spec.kw):
                tap = _taps(xp[:, c], 1, rows, kh, kw, ow, s)
                out += tap[:, None, :, :] * wt[None, :, c, kh, kw, None, None]
    return Tensor(out, NCHW, ElemType.FP32)


# --------------------------------------------------------------------------
# integer micro-kernels


def dot4_i8(a, b):
    """Widening 4-lane int8 dot product with an exact int32 result.

    Lanes are multiplied into int16 (|127*127| fits), adjacent products are
    added pairwise into int32, and the two pair sums are added. Inputs may
    carry leading batch axes, which broadcast; the last axis must be 4.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape[-1:] != (DOT_LANES,) or b.shape[-1:] != (DOT_LANES,):
        raise ShapeError(f"dot4_i8 needs 4 lanes, got {a.shape} and {b.shape}")
    if a.dtype != np.int8:
        a = _as_codes(a)
    if b.dtype != np.int8:
        b = _as_codes(b)
    prod = a.astype(np.int16) * b.astype(np.int16)
    pairs = prod[..., 0::2].astype(np.int32) + prod[..., 1::2]
    return pairs[..., 0] + pairs[..., 1]


def _as_codes(x) -> np.ndarray:
    x = np.asarray(x)
    if x.size and (x.min() < -128 or x.max() > 127):
        raise InvalidArgumentError("int8 lanes must lie in [-128, 127]")
    return x.astype(np.int8)


def mmla_4x4_i8(A, B) -> np.ndarray:
    """4x4 int32 tile ``C[i, j] = sum_k A[i, k] * B[j, k]`` from two 4xK int8 panels.

    K is zero-padded up to a multiple of 4 and reduced in 4-lane chunks with
    :func:`dot4_i8`. Leading axes of ``A`` and ``B`` broadcast against each
    other, so a stack of panels yields a stack of tiles.
    """
    A = np.asarray(A)
    B = np.asarray(B)
    if A.shape[-2:-1] != (PANEL_ROWS,) or B.shape[-2:-1] != (PANEL_ROWS,):
        raise ShapeError(f"panels must have 4 rows, got {A.shape} and {B.shape}")
    k = A.shape[-1]
    if B.shape[-1] != k:
        raise ShapeError(f"panel depth mismatch: {k} vs {B.shape[-1]}")
    A = _pad_depth(A)
    B = _pad_depth(B)
    chunks = A.shape[-1] // DOT_LANES
    a = A.reshape(A.shape[:-1] + (chunks, DOT_LANES))[..., :, None, :, :]
    b = B.reshape(B.shape[:-1] + (chunks, DOT_LANES))[..., None, :, :, :]
    return dot4_i8(a, b).sum(axis=-1, dtype=np.int32)


def _pad_depth(panel: np.ndarray) -> np.ndarray:
    k = panel.shape[-1]
    extra = -k % DOT_LANES
    if not extra:
        return panel
    widths = [(0, 0)] * (panel.ndim - 1) + [(0, extra)]
    return np.pad(panel, widths)


# --------------------------------------------------------------------------
# weight packing; done once by the static executor, per call by the VM


@dataclass(frozen=True)
class PackedWeight:
    schedule: ScheduleKind
    data: np.ndarray


def prepack_weight(schedule: ScheduleKind, weight: Tensor, block: int = DEFAULT_BLOCK) -> PackedWeight:
    wt = weight.data
    o, c, kh, kw = wt.shape
    if schedule in (ScheduleKind.NCHW_SPATIAL_PACK_FP32, ScheduleKind.NCHW_SPATIAL_PACK_I8):
        acc = np.float32 if schedule is ScheduleKind.NCHW_SPATIAL_PACK_FP32 else np.int32
        ob, cb = -(-o // block), -(-c // block)
        padded = np.zeros((ob * block, cb * block, kh, kw), dtype=acc)
        padded[:o, :c] = wt
        # (Ob, bo, Cb, bc, KH, KW) -> (Ob, Cb, KH, KW, bc, bo)
        data = padded.reshape(ob, block, cb, block, kh, kw).transpose(0, 2, 4, 5, 3, 1)
    elif schedule is ScheduleKind.NCHW_SIMD_I8:
        cq = -(-c // DOT_LANES)
        padded = np.zeros((o, cq * DOT_LANES, kh, kw), dtype=np.int8)
        padded[:, :c] = wt
        # (O, Cq, lane, KH, KW) -> (Cq, KH, KW, O, lane)
        data = padded.reshape(o, cq, DOT_LANES, kh, kw).transpose(1, 3, 4, 0, 2)
    elif schedule is ScheduleKind.NHWC_SPATIAL_PACK_FP32:
        data = wt.transpose(2, 3, 1, 0)  # HWIO
    elif schedule is ScheduleKind.NHWC_QUANTIZED_INTERLEAVED_I8:
        data = pack_interleaved_panels(wt.reshape(o, c * kh * kw)).data
    elif schedule is ScheduleKind.DIRECT_FP32_REFERENCE:
        data = wt
    else:  # pragma: no cover
        raise InvalidArgumentError(f"unknown schedule {schedule}")
    return PackedWeight(schedule, np.ascontiguousarray(data))


def _packed(schedule: ScheduleKind, weight: Tensor, packed: Optional[PackedWeight], **kw) -> np.ndarray:
    if packed is None:
        return prepack_weight(schedule, weight, **kw).data
    if packed.schedule is not schedule:
        raise InvalidArgumentError(f"weight packed for {packed.schedule.value}, not {schedule.value}")
    return packed.data


# --------------------------------------------------------------------------
# schedules


def conv2d_nchw_spatial_pack(
    input: Tensor,
    weight: Tensor,
    spec: ConvSpec,
    elem: ElemType = ElemType.FP32,
    *,
    block: int = DEFAULT_BLOCK,
    packed: Optional[PackedWeight] = None,
    workers: int = 1,
) -> Tensor:
    """Blocked convolution over NCHW{block}c data.

    The input and weights are packed into channel blocks; each task owns one
    output-channel block and a group of 4 output rows and reduces over input
    channel blocks and kernel taps. I8 inputs produce I32 accumulators.
    """
    if elem not in (ElemType.FP32, ElemType.I8):
        raise ElemTypeError(f"spatial pack supports fp32 and i8, got {elem.value}")
    n, h, w, oh, ow = _check_conv(input, weight, spec, NCHW, (elem,))
    schedule = ScheduleKind.NCHW_SPATIAL_PACK_FP32 if elem is ElemType.FP32 else ScheduleKind.NCHW_SPATIAL_PACK_I8
    acc_dtype = np.float32 if elem is ElemType.FP32 else np.int32
    wp = _packed(schedule, weight, packed, block=block)
    if wp.shape[-1] != block:
        raise InvalidArgumentError("packed weight block does not match")

    p, s = spec.padding, spec.stride
    xb = pack_nchw_to_nchwc(input, block).data.astype(acc_dtype, copy=False)
    xp = np.pad(xb, ((0, 0), (0, 0), (p, p), (p, p), (0, 0)))
    ob_count, cb_count = wp.shape[0], wp.shape[1]
    out = np.empty((n, ob_count, oh, ow, block), dtype=acc_dtype)

    def task(job):
        ob, rows = job
        acc = np.zeros((n, len(rows), ow, block), dtype=acc_dtype)
        for cb in range(cb_count):
            for kh in range(spec.kh):
                for kw in range(spec.kw):
                    tap = _taps(xp[:, cb], 1, rows, kh, kw, ow, s)
                    acc += tap @ wp[ob, cb, kh, kw]
        out[:, ob, rows.start:rows.stop] = acc

    _run_groups(task, [(ob, rows) for ob in range(ob_count) for rows in _row_groups(oh)], workers)
    out_elem = ElemType.FP32 if elem is ElemType.FP32 else ElemType.I32
    return unpack_nchwc_to_nchw(Tensor(out, Layout.nchwc(block), out_elem), spec.o)


def conv2d_nchw_simd_i8(
    input: Tensor,
    weight: Tensor,
    spec: ConvSpec,
    *,
    packed: Optional[PackedWeight] = None,
    workers: int = 1,
) -> Tensor:
    """Int8 convolution whose every multiply-accumulate goes through ``dot4_i8``.

    Channels are zero-padded to a multiple of 4 and regrouped into 4-lane
    vectors; the reduction walks channel chunks and kernel taps.
    """
    n, h, w, oh, ow = _check_conv(input, weight, spec, NCHW, (ElemType.I8,))
    wp = _packed(ScheduleKind.NCHW_SIMD_I8, weight, packed)  # (Cq, KH, KW, O, 4)
    p, s = spec.padding, spec.stride
    x4 = pack_nchw_to_nchwc(input, DOT_LANES).data  # (N, Cq, H, W, 4)
    xp = np.pad(x4, ((0, 0), (0, 0), (p, p), (p, p), (0, 0)))
    out = np.empty((n, spec.o, oh, ow), dtype=np.int32)

    def task(rows):
        acc = np.zeros((n, spec.o, len(rows), ow), dtype=np.int32)
        for cq in range(wp.shape[0]):
            for kh in range(spec.kh):
                for kw in range(spec.kw):
                    lanes = _taps(xp[:, cq], 1, rows, kh, kw, ow, s)  # (N, r, OW, 4)
                    acc += dot4_i8(lanes[:, None], wp[cq, kh, kw][None, :, None, None, :])
        out[:, :, rows.start:rows.stop] = acc

    _run_groups(task, _row_groups(oh), workers)
    return Tensor(out, NCHW, ElemType.I32)


def conv2d_nhwc_spatial_pack_f32(
    input: Tensor,
    weight: Tensor,
    spec: ConvSpec,
    *,
    packed: Optional[PackedWeight] = None,
    workers: int = 1,
) -> Tensor:
    """fp32 NHWC convolution over WC-fused rows, 4 output rows per task."""
    n, h, w, oh, ow = _check_conv(input, weight, spec, NHWC, (ElemType.FP32,))
    wp = _packed(ScheduleKind.NHWC_SPATIAL_PACK_FP32, weight, packed)  # (KH, KW, C, O)
    p, s, c = spec.padding, spec.stride, spec.c
    wc = pack_nhwc_wc(input, p).data  # (N, Hp, Wp*C)
    xp = wc.reshape(n, wc.shape[1], -1, c)
    out = np.empty((n, oh, ow, spec.o), dtype=np.float32)

    def task(rows):
        acc = np.zeros((n, len(rows), ow, spec.o), dtype=np.float32)
        for kh in range(spec.kh):
            for kw in range(spec.kw):
                acc += _taps(xp, 1, rows, kh, kw, ow, s) @ wp[kh, kw]
        out[:, rows.start:rows.stop] = acc

    _run_groups(task, _row_groups(oh), workers)
    return Tensor(out, NHWC, ElemType.FP32)


def conv2d_nhwc_quantized_interleaved_i8(
    input: Tensor,
    weight: Tensor,
    spec: ConvSpec,
    *,
    packed: Optional[PackedWeight] = None,
    panels_per_chunk: int = PANELS_PER_CHUNK,
    workers: int = 1,
) -> Tensor:
    """Int8 NHWC convolution lowered to 4xK by 4xK interleaved panel products.

    The fused N*OH*OW pixel axis is cut into panels of 4 im2col rows; weights
    form panels of 4 output channels. Each (pixel panel, channel panel) pair
    yields a 4x4 int32 tile via ``mmla_4x4_i8``. Only ``panels_per_chunk``
    pixel panels are materialized at a time.
    """
    n, h, w, oh, ow = _check_conv(input, weight, spec, NHWC, (ElemType.I8,))
    bp = _packed(ScheduleKind.NHWC_QUANTIZED_INTERLEAVED_I8, weight, packed)  # (Q, 4, Kp)
    p, s = spec.padding, spec.stride
    k = spec.reduction_length
    kp = bp.shape[-1]
    xp = np.pad(input.data, ((0, 0), (p, p), (p, p), (0, 0)))
    windows = np.lib.stride_tricks.sliding_window_view(xp, (spec.kh, spec.kw), axis=(1, 2))
    windows = windows[:, : (oh - 1) * s + 1 : s, : (ow - 1) * s + 1 : s]  # (N, OH, OW, C, KH, KW)
    pixels = n * oh * ow
    out = np.empty((pixels, spec.o), dtype=np.int32)
    chunk_rows = panels_per_chunk * PANEL_ROWS

    def task(start):
        stop = min(start + chunk_rows, pixels)
        idx = np.arange(start, stop)
        a = np.zeros((-(-(stop - start) // PANEL_ROWS) * PANEL_ROWS, kp), dtype=np.int8)
        a[: stop - start, :k] = windows[idx // (oh * ow), (idx // ow) % oh, idx % ow].reshape(-1, k)
        tiles = mmla_4x4_i8(a.reshape(-1, PANEL_ROWS, kp)[:, None], bp[None])  # (P, Q, 4, 4)
        block = tiles.transpose(0, 2, 1, 3).reshape(a.shape[0], -1)
        out[start:stop] = block[: stop - start, : spec.o]

    _run_groups(task, range(0, pixels, chunk_rows), workers)
    return Tensor(out.reshape(n, oh, ow, spec.o), NHWC, ElemType.I32)


# --------------------------------------------------------------------------
# dense and dispatch


def dense_f32(x: Tensor, weight: Tensor) -> Tensor:
    if x.elem is not ElemType.FP32 or weight.elem is not ElemType.FP32:
        raise ElemTypeError("dense_f32 expects fp32 operands")
    _check_dense(x, weight)
    return Tensor(np.ascontiguousarray(x.data @ weight.data.T), NC, ElemType.FP32)


def dense_i8(x: Tensor, weight: Tensor) -> Tensor:
    """Int8 codes times int8 codes, exact int32 accumulation."""
    if x.elem is not ElemType.I8 or weight.elem is not ElemType.I8:
        raise ElemTypeError("dense_i8 expects i8 operands")
    _check_dense(x, weight)
    acc = x.data.astype(np.int32) @ weight.data.astype(np.int32).T
    return Tensor(np.ascontiguousarray(acc), NC, ElemType.I32)


def _check_dense(x: Tensor, weight: Tensor) -> None:
    if x.layout != NC or weight.layout != NC:
        raise LayoutMismatchError("dense operands must be NC matrices")
    if x.shape[1] != weight.shape[1]:
        raise ShapeError(f"dense reduction mismatch {x.shape} x {weight.shape}")


def conv2d(
    input: Tensor,
    weight: Tensor,
    spec: ConvSpec,
    schedule: ScheduleKind,
    packed: Optional[PackedWeight] = None,
    workers: int = 1,
) -> Tensor:
    """Run ``schedule`` on ``input``; the entry point used by the graph executors."""
    if schedule is ScheduleKind.DIRECT_FP32_REFERENCE:
        return conv2d_direct_f32(input, weight, spec)
    if schedule is ScheduleKind.NCHW_SPATIAL_PACK_FP32:
        return conv2d_nchw_spatial_pack(input, weight, spec, ElemType.FP32, packed=packed, workers=workers)
    if schedule is ScheduleKind.NCHW_SPATIAL_PACK_I8:
        return conv2d_nchw_spatial_pack(input, weight, spec, ElemType.I8, packed=packed, workers=workers)
    if schedule is ScheduleKind.NCHW_SIMD_I8:
        return conv2d_nchw_simd_i8(input, weight, spec, packed=packed, workers=workers)
    if schedule is ScheduleKind.NHWC_SPATIAL_PACK_FP32:
        return conv2d_nhwc_spatial_pack_f32(input, weight, spec, packed=packed, workers=workers)
    if schedule is ScheduleKind.NHWC_QUANTIZED_INTERLEAVED_I8:
        return conv2d_nhwc_quantized_interleaved_i8(input, weight, spec, packed=packed, workers=workers)
    raise InvalidArgumentError(f"unknown schedule {schedule}")
