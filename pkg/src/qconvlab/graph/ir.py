"""Static dataflow IR: value descriptors, nodes, and shape inference."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from ..errors import InvalidArgumentError, ShapeError, UnsupportedOpError
from ..kernels import ConvSpec, ScheduleKind
from ..tensor import NC, NCHW, NHWC, ElemType, Layout


class Op(enum.Enum):
    CONV2D = "conv2d"
    ADD = "add"
    RELU = "relu"
    GLOBAL_AVG_POOL = "global_avg_pool"
    DENSE = "dense"
    QUANTIZE = "quantize"
    DEQUANTIZE = "dequantize"
    DEQUANT_ACC = "dequant_acc"


PARAM_OPS = (Op.CONV2D, Op.DENSE)


@dataclass(frozen=True)
class ValueInfo:
    shape: tuple
    elem: ElemType
    layout: Layout

    @property
    def nbytes(self) -> int:
        return int(np.prod(self.shape)) * self.elem.nbytes


@dataclass(frozen=True)
class GraphInput:
    id: int
    info: ValueInfo


@dataclass
class Node:
    id: int
    op: Op
    inputs: tuple
    attrs: dict
    info: ValueInfo

    @property
    def weight(self) -> Optional[np.ndarray]:
        return self.attrs.get("weight")

    def conv_spec(self) -> ConvSpec:
        return ConvSpec.from_weight(self.attrs["weight"].shape, self.attrs["stride"], self.attrs["padding"])


@dataclass
class GraphIR:
    """Topologically ordered list of nodes over a shared value-id space.

    Graph inputs and nodes draw ids from the same counter; ``outputs`` may
    name either.
    """

    inputs: List[GraphInput] = field(default_factory=list)
    nodes: List[Node] = field(default_factory=list)
    outputs: List[int] = field(default_factory=list)

    def value_infos(self) -> Dict[int, ValueInfo]:
        infos = {gi.id: gi.info for gi in self.inputs}
        infos.update((n.id, n.info) for n in self.nodes)
        return infos

    def node(self, node_id: int) -> Node:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)

    def next_id(self) -> int:
        ids = [gi.id for gi in self.inputs] + [n.id for n in self.nodes]
        return max(ids, default=-1) + 1

    def add_input(self, shape, elem: ElemType = ElemType.FP32, layout: Layout = NCHW) -> int:
        vid = self.next_id()
        self.inputs.append(GraphInput(vid, ValueInfo(tuple(int(d) for d in shape), elem, layout)))
        return vid

    def add(self, op: Op, inputs: Sequence[int], **attrs) -> int:
        infos = self.value_infos()
        try:
            in_infos = [infos[i] for i in inputs]
        except KeyError as exc:
            raise InvalidArgumentError(f"{op.value} references undefined value {exc.args[0]}") from None
        vid = self.next_id()
        self.nodes.append(Node(vid, op, tuple(inputs), attrs, infer(op, attrs, in_infos)))
        return vid

    def consumers(self) -> Dict[int, List[int]]:
        uses: Dict[int, List[int]] = {vid: [] for vid in self.value_infos()}
        for n in self.nodes:
            for i in n.inputs:
                uses[i].append(n.id)
        return uses

    def validate(self) -> None:
        """Check ordering, acyclicity and that every declared shape re-derives."""
        known = {gi.id: gi.info for gi in self.inputs}
        for n in self.nodes:
            if n.id in known:
                raise InvalidArgumentError(f"duplicate value id {n.id}")
            for i in n.inputs:
                if i not in known:
                    raise InvalidArgumentError(f"node {n.id} uses {i} before it is defined")
            derived = infer(n.op, n.attrs, [known[i] for i in n.inputs])
            if derived != n.info:
                raise ShapeError(f"node {n.id}: declared {n.info}, derived {derived}")
            known[n.id] = n.info
        for o in self.outputs:
            if o not in known:
                raise InvalidArgumentError(f"output {o} is not a graph value")

    def param_nodes(self) -> List[Node]:
        return [n for n in self.nodes if n.op in PARAM_OPS]


def _spatial(info: ValueInfo) -> tuple:
    n = info.shape
    if info.layout == NCHW:
        return n[0], n[1], n[2], n[3]
    if info.layout == NHWC:
        return n[0], n[3], n[1], n[2]
    raise ShapeError(f"expected an NCHW or NHWC activation, got {info.layout}")


def infer(op: Op, attrs: dict, ins: Sequence[ValueInfo]) -> ValueInfo:
    """Output descriptor of ``op`` applied to values described by ``ins``."""
    arity = {Op.ADD: 2}.get(op, 1)
    if len(ins) != arity:
        raise InvalidArgumentError(f"{op.value} takes {arity} input(s), got {len(ins)}")
    x = ins[0]
    if op is Op.CONV2D:
        schedule: ScheduleKind = attrs["schedule"]
        weight = attrs["weight"]
        if x.layout != schedule.layout:
            raise ShapeError(f"schedule {schedule.value} needs {schedule.layout} input, got {x.layout}")
        if x.elem is not schedule.precision or weight.dtype != schedule.precision.dtype:
            raise ShapeError(f"schedule {schedule.value} does not accept {x.elem.value} operands")
        n, c, h, w = _spatial(x)
        spec = ConvSpec.from_weight(weight.shape, attrs["stride"], attrs["padding"])
        if c != spec.c:
            raise ShapeError(f"conv expects {spec.c} channels, input has {c}")
        oh, ow = spec.output_hw(h, w)
        shape = (n, spec.o, oh, ow) if x.layout == NCHW else (n, oh, ow, spec.o)
        out_elem = ElemType.I32 if x.elem is ElemType.I8 else ElemType.FP32
        return ValueInfo(shape, out_elem, x.layout)
    if op is Op.DENSE:
        weight = attrs["weight"]
        if x.layout != NC or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
            raise ShapeError(f"dense weight {weight.shape} incompatible with input {x.shape}")
        if x.elem is ElemType.FP32 and weight.dtype == np.float32:
            out_elem = ElemType.FP32
        elif x.elem is ElemType.I8 and weight.dtype == np.int8:
            out_elem = ElemType.I32
        else:
            raise ShapeError(f"dense does not accept {x.elem.value} x {weight.dtype}")
        return ValueInfo((x.shape[0], weight.shape[0]), out_elem, NC)
    if op is Op.ADD:
        if ins[0] != ins[1] or x.elem is not ElemType.FP32:
            raise ShapeError(f"add operands differ or are not fp32: {ins[0]} vs {ins[1]}")
        return x
    if op is Op.RELU:
        if x.elem is not ElemType.FP32:
            raise ShapeError("relu operates on fp32 activations")
        return x
    if op is Op.GLOBAL_AVG_POOL:
        if x.elem is not ElemType.FP32:
            raise ShapeError("global_avg_pool operates on fp32 activations")
        n, c, _, _ = _spatial(x)
        return ValueInfo((n, c), ElemType.FP32, NC)
    if op is Op.QUANTIZE:
        if x.elem is not ElemType.FP32:
            raise ShapeError("quantize expects fp32")
        return ValueInfo(x.shape, ElemType.I8, x.layout)
    if op is Op.DEQUANTIZE:
        if x.elem is not ElemType.I8:
            raise ShapeError("dequantize expects i8")
        return ValueInfo(x.shape, ElemType.FP32, x.layout)
    if op is Op.DEQUANT_ACC:
        if x.elem is not ElemType.I32:
            raise ShapeError("dequant_acc expects i32 accumulators")
        return ValueInfo(x.shape, ElemType.FP32, x.layout)
    raise UnsupportedOpError(f"unsupported op {op}")
