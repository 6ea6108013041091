"""Dense tensors with explicit layouts, and the packing transforms between them.

A :class:`Tensor` is a thin immutable wrapper around a contiguous numpy buffer
whose physical shape is determined by its :class:`Layout`. Only the handful of
layouts the convolution schedules need are supported:

* ``NCHW`` / ``NHWC`` activations and ``OIHW`` weights,
* ``NCHWc`` blocked activations, physical shape ``(N, C/c, H, W, c)``,
* ``NHWC_WC`` activations whose W and C axes are fused, ``(N, H, W*C)``,
* 4-row interleaved panels, ``(M/4, 4, K)``,
* ``NC`` row-major matrices (pooled features, dense weights).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InvalidArgumentError, LayoutMismatchError, ShapeError

NCHWC_BLOCKS = (4, 8, 16)
DEFAULT_BLOCK = 16
PANEL_ROWS = 4


class ElemType(enum.Enum):
    FP32 = "fp32"
    I8 = "i8"
    I32 = "i32"

    @property
    def dtype(self) -> np.dtype:
        return _DTYPES[self]

    @property
    def nbytes(self) -> int:
        return self.dtype.itemsize

    @classmethod
    def from_dtype(cls, dtype) -> "ElemType":
        dtype = np.dtype(dtype)
        for elem, dt in _DTYPES.items():
            if dt == dtype:
                return elem
        raise InvalidArgumentError(f"no element type for dtype {dtype}")


_DTYPES = {
    ElemType.FP32: np.dtype(np.float32),
    ElemType.I8: np.dtype(np.int8),
    ElemType.I32: np.dtype(np.int32),
}


@dataclass(frozen=True)
class Layout:
    kind: str
    block: Optional[int] = None

    def __post_init__(self):
        if self.kind not in _RANKS:
            raise InvalidArgumentError(f"unknown layout kind {self.kind!r}")
        if self.kind == "NCHWc":
            if self.block not in NCHWC_BLOCKS:
                raise InvalidArgumentError(
                    f"NCHWc block must be one of {NCHWC_BLOCKS}, got {self.block}"
                )
        elif self.kind == "PANEL":
            if self.block != PANEL_ROWS:
                raise InvalidArgumentError("interleaved panels have exactly 4 rows")
        elif self.block is not None:
            raise InvalidArgumentError(f"layout {self.kind} takes no block size")

    @classmethod
    def nchwc(cls, block: int = DEFAULT_BLOCK) -> "Layout":
        return cls("NCHWc", block)

    @property
    def rank(self) -> int:
        return _RANKS[self.kind]

    @property
    def name(self) -> str:
        if self.kind == "NCHWc":
            return f"NCHW{self.block}c"
        if self.kind == "PANEL":
            return f"PANEL{self.block}"
        return self.kind

    @classmethod
    def parse(cls, name: str) -> "Layout":
        upper = name.upper()
        if upper.startswith("NCHW") and upper.endswith("C") and upper[4:-1].isdigit():
            return cls.nchwc(int(upper[4:-1]))
        if upper.startswith("PANEL") and upper[5:].isdigit():
            return cls("PANEL", int(upper[5:]))
        if upper in ("NCHW", "NHWC", "OIHW", "NC", "NHWC_WC"):
            return cls(upper)
        raise InvalidArgumentError(f"unknown layout {name!r}")

    def __str__(self) -> str:
        return self.name


_RANKS = {"NCHW": 4, "NHWC": 4, "OIHW": 4, "NCHWc": 5, "NHWC_WC": 3, "PANEL": 3, "NC": 2}

NCHW = Layout("NCHW")
NHWC = Layout("NHWC")
OIHW = Layout("OIHW")
NC = Layout("NC")
NHWC_WC = Layout("NHWC_WC")
INTERLEAVED_PANEL = Layout("PANEL", PANEL_ROWS)


@dataclass(frozen=True, eq=False)
class Tensor:
    """Contiguous buffer tagged with a layout and an element type.

    ``shape`` is the physical (layout-padded) shape of ``data``. Tensors are
    treated as immutable; every transform returns a new tensor.
    """

    data: np.ndarray
    layout: Layout
    elem: ElemType

    def __post_init__(self):
        if not isinstance(self.data, np.ndarray):
            raise InvalidArgumentError("tensor data must be a numpy array")
        if self.data.dtype != self.elem.dtype:
            raise InvalidArgumentError(
                f"buffer dtype {self.data.dtype} does not match element type {self.elem.value}"
            )
        if self.data.ndim != self.layout.rank:
            raise ShapeError(
                f"layout {self.layout} expects rank {self.layout.rank}, got shape {self.data.shape}"
            )
        if any(d <= 0 for d in self.data.shape):
            raise ShapeError(f"extents must be positive, got {self.data.shape}")
        block_axis = {"NCHWc": 4, "PANEL": 1}.get(self.layout.kind)
        if block_axis is not None and self.data.shape[block_axis] != self.layout.block:
            raise ShapeError(f"shape {self.data.shape} inconsistent with layout {self.layout}")
        if not self.data.flags.c_contiguous:
            object.__setattr__(self, "data", np.ascontiguousarray(self.data))

    @classmethod
    def from_array(cls, array, layout: Layout, elem: Optional[ElemType] = None) -> "Tensor":
        if elem is None:
            elem = ElemType.from_dtype(np.asarray(array).dtype)
        return cls(np.ascontiguousarray(array, dtype=elem.dtype), layout, elem)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def nbytes(self) -> int:
        return int(self.data.nbytes)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, layout={self.layout}, elem={self.elem.value})"


def _require(t: Tensor, *kinds: str) -> None:
    if t.layout.kind not in kinds:
        raise LayoutMismatchError(f"expected layout {' or '.join(kinds)}, got {t.layout}")


def pack_nchw_to_nchwc(t: Tensor, block: int = DEFAULT_BLOCK) -> Tensor:
    """Block the channel axis: (N, C, H, W) -> (N, ceil(C/block), H, W, block).

    Channels past ``C`` in the last block are zero.
    """
    _require(t, "NCHW")
    if block not in NCHWC_BLOCKS:
        raise InvalidArgumentError(f"block must be one of {NCHWC_BLOCKS}, got {block}")
    n, c, h, w = t.shape
    nb = -(-c // block)
    padded = np.zeros((n, nb * block, h, w), dtype=t.data.dtype)
    padded[:, :c] = t.data
    out = padded.reshape(n, nb, block, h, w).transpose(0, 1, 3, 4, 2)
    return Tensor(np.ascontiguousarray(out), Layout.nchwc(block), t.elem)


def unpack_nchwc_to_nchw(t: Tensor, original_c: int) -> Tensor:
    _require(t, "NCHWc")
    n, nb, h, w, block = t.shape
    if original_c <= 0 or original_c > nb * block:
        raise InvalidArgumentError(
            f"original_c={original_c} outside padded capacity {nb * block}"
        )
    full = t.data.transpose(0, 1, 4, 2, 3).reshape(n, nb * block, h, w)
    return Tensor(np.ascontiguousarray(full[:, :original_c]), NCHW, t.elem)


def transpose_nchw_nhwc(t: Tensor) -> Tensor:
    """Swap between NCHW and NHWC; applying it twice is the identity."""
    if t.layout == NCHW:
        return Tensor(np.ascontiguousarray(t.data.transpose(0, 2, 3, 1)), NHWC, t.elem)
    if t.layout == NHWC:
        return Tensor(np.ascontiguousarray(t.data.transpose(0, 3, 1, 2)), NCHW, t.elem)
    raise LayoutMismatchError(f"transpose needs NCHW or NHWC, got {t.layout}")


def pack_nhwc_wc(t: Tensor, pad: int = 0) -> Tensor:
    """Zero-pad H and W by ``pad`` and fuse W with C: (N, H, W, C) -> (N, H', W'*C)."""
    _require(t, "NHWC")
    if pad < 0:
        raise InvalidArgumentError("pad must be non-negative")
    n, h, w, c = t.shape
    data = t.data
    if pad:
        data = np.pad(data, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    return Tensor(np.ascontiguousarray(data.reshape(n, h + 2 * pad, (w + 2 * pad) * c)), NHWC_WC, t.elem)


def pack_interleaved_panels(matrix: np.ndarray, k_multiple: int = 4) -> Tensor:
    """Split an (M, K) matrix into 4-row panels, zero-padding M to a multiple
    of 4 and K to a multiple of ``k_multiple``."""
    matrix = np.asarray(matrix)
    if matrix.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {matrix.shape}")
    m, k = matrix.shape
    mp = -(-m // PANEL_ROWS) * PANEL_ROWS
    kp = -(-k // k_multiple) * k_multiple
    out = np.zeros((mp, kp), dtype=matrix.dtype)
    out[:m, :k] = matrix
    return Tensor.from_array(out.reshape(mp // PANEL_ROWS, PANEL_ROWS, kp), INTERLEAVED_PANEL)
