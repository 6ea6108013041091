"""Quantized-inference kernel lab: int8 conv schedules, layout packing,
symmetric quantization, static vs. VM graph execution, and a benchmark
harness."""

from .errors import (
    ElemTypeError,
    InvalidArgumentError,
    InvalidSpecError,
    LayoutMismatchError,
    NotApplicableError,
    QConvLabError,
    ShapeError,
    UnsupportedOpError,
)
from .kernels import ConvSpec, ScheduleKind
from .quant import QuantParams, calibrate_maxabs, dequantize, dequantize_accumulator, quantize
from .tensor import (
    INTERLEAVED_PANEL,
    NC,
    NCHW,
    NHWC,
    NHWC_WC,
    OIHW,
    ElemType,
    Layout,
    Tensor,
    pack_nchw_to_nchwc,
    transpose_nchw_nhwc,
    unpack_nchwc_to_nchw,
)

__version__ = "0.1.0"
