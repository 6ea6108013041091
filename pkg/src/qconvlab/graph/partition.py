"""Quantization pass: calibrate, rewrite to int8, and split into three segments.

The rewritten graph keeps every inter-layer activation in fp32. Around each
CONV2D/DENSE it inserts

    QUANTIZE(x, s_x) -> int8 CONV2D/DENSE (codes, s_w) -> DEQUANT_ACC(s_x, s_w)

and the result is partitioned into

* prefix: the QUANTIZE nodes applied directly to graph inputs,
* middle: the int8 core and everything between,
* suffix: DEQUANTIZE nodes for any graph output that is still int8.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from .. import quant
from ..errors import InvalidArgumentError, ShapeError, UnsupportedOpError
from ..kernels import INT8_COUNTERPART, ScheduleKind
from ..tensor import ElemType
from .ir import PARAM_OPS, GraphInput, GraphIR, Node, Op, ValueInfo

FLOAT_OPS = (Op.CONV2D, Op.DENSE, Op.ADD, Op.RELU, Op.GLOBAL_AVG_POOL)


@dataclass
class PartitionedGraph:
    prefix: GraphIR
    middle: GraphIR
    suffix: GraphIR
    inputs: List[GraphInput]
    outputs: List[int]

    def segments(self) -> List[GraphIR]:
        return [self.prefix, self.middle, self.suffix]

    def non_empty(self) -> int:
        return sum(1 for seg in self.segments() if seg.nodes)

    def fused(self) -> GraphIR:
        """The monolithic quantized graph: all three segments in order."""
        nodes = self.prefix.nodes + self.middle.nodes + self.suffix.nodes
        return GraphIR(list(self.inputs), nodes, list(self.outputs))


def segment(g: GraphIR, ids) -> GraphIR:
    """Sub-graph of ``g`` made of nodes in ``ids``, with explicit boundary values."""
    ids = set(ids)
    infos = g.value_infos()
    nodes = [n for n in g.nodes if n.id in ids]
    inputs: List[int] = []
    for n in nodes:
        for i in n.inputs:
            if i not in ids and i not in inputs:
                inputs.append(i)
    used_outside = {i for n in g.nodes if n.id not in ids for i in n.inputs}
    outputs = [n.id for n in nodes if n.id in used_outside or n.id in g.outputs]
    if not nodes:
        outputs = []
    return GraphIR([GraphInput(i, infos[i]) for i in inputs], nodes, outputs)


def partition(q: GraphIR) -> PartitionedGraph:
    input_ids = {gi.id for gi in q.inputs}
    prefix = [n.id for n in q.nodes if n.op is Op.QUANTIZE and n.inputs[0] in input_ids]
    suffix = [n.id for n in q.nodes if n.op is Op.DEQUANTIZE and n.id in q.outputs]
    middle = [n.id for n in q.nodes if n.id not in prefix and n.id not in suffix]
    return PartitionedGraph(
        segment(q, prefix), segment(q, middle), segment(q, suffix), list(q.inputs), list(q.outputs)
    )


def _calibration_batches(g: GraphIR, calibration_inputs) -> List[List[np.ndarray]]:
    batches = []
    for item in calibration_inputs:
        arrays = list(item) if isinstance(item, (list, tuple)) else [item]
        arrays = [a.data if hasattr(a, "layout") else np.asarray(a) for a in arrays]
        if len(arrays) != len(g.inputs):
            raise InvalidArgumentError(f"calibration item has {len(arrays)} inputs, graph takes {len(g.inputs)}")
        for gi, a in zip(g.inputs, arrays):
            if a.shape != gi.info.shape:
                raise ShapeError(f"calibration input shape {a.shape} != {gi.info.shape}")
        batches.append(arrays)
    return batches


def quantize_pass(
    g: GraphIR,
    calibration_inputs: Sequence,
    int8_schedule: Optional[ScheduleKind] = None,
) -> PartitionedGraph:
    """Rewrite an fp32 graph to int8 and partition it.

    Activation scales come from max-abs calibration over one fp32 forward
    pass per calibration input; weight scales from the weights themselves.
    ``int8_schedule`` overrides the default int8 counterpart of each conv's
    fp32 schedule.
    """
    from .executor import interpret

    if not calibration_inputs:
        raise InvalidArgumentError("quantize_pass needs at least one calibration input")
    for n in g.nodes:
        if n.op not in FLOAT_OPS or n.info.elem is not ElemType.FP32:
            raise UnsupportedOpError(f"node {n.id} ({n.op.value}) is not an fp32 float op")
    if any(gi.info.elem is not ElemType.FP32 for gi in g.inputs):
        raise UnsupportedOpError("graph inputs must be fp32")
    g.validate()

    batches = _calibration_batches(g, calibration_inputs)
    fed = {n.inputs[0] for n in g.nodes if n.op in PARAM_OPS}
    observed: Dict[int, List[np.ndarray]] = {v: [] for v in fed}
    for arrays in batches:
        _, env = interpret(g, arrays, record=True)
        for v in fed:
            observed[v].append(env[v].ravel())
    act_scale = {v: quant.calibrate_maxabs(np.concatenate(vals)).scale for v, vals in observed.items()}

    q = GraphIR(inputs=list(g.inputs))
    remap = {gi.id: gi.id for gi in g.inputs}
    quantized: Dict[int, int] = {}

    def quantized_value(old_src: int) -> int:
        if old_src not in quantized:
            quantized[old_src] = q.add(Op.QUANTIZE, [remap[old_src]], scale=act_scale[old_src])
        return quantized[old_src]

    for gi in g.inputs:
        if gi.id in fed:
            quantized_value(gi.id)

    for n in g.nodes:
        if n.op not in PARAM_OPS:
            remap[n.id] = q.add(n.op, [remap[i] for i in n.inputs], **n.attrs)
            continue
        src = quantized_value(n.inputs[0])
        w_scale = quant.calibrate_maxabs(n.weight).scale
        attrs = dict(n.attrs, weight=quant.quantize_array(n.weight, w_scale), w_scale=w_scale)
        if n.op is Op.CONV2D:
            attrs["schedule"] = _int8_schedule(n.attrs["schedule"], int8_schedule)
        acc = q.add(n.op, [src], **attrs)
        remap[n.id] = q.add(Op.DEQUANT_ACC, [acc], in_scale=act_scale[n.inputs[0]], w_scale=w_scale)

    q.outputs = [remap[o] for o in g.outputs]
    for k, o in enumerate(q.outputs):
        if q.value_infos()[o].elem is ElemType.I8:
            q.outputs[k] = q.add(Op.DEQUANTIZE, [o], scale=q.node(o).attrs["scale"])
    q.validate()
    return partition(q)


def _int8_schedule(fp32_schedule: ScheduleKind, override: Optional[ScheduleKind]) -> ScheduleKind:
    if override is None:
        return INT8_COUNTERPART[fp32_schedule]
    if override.precision is not ElemType.I8:
        raise InvalidArgumentError(f"{override.value} is not an int8 schedule")
    if override.layout != fp32_schedule.layout:
        raise InvalidArgumentError(f"{override.value} cannot replace {fp32_schedule.value}")
    return override


def quantization_error_bound(pg: PartitionedGraph) -> Dict[int, float]:
    """Worst-case |quantized - fp32| per element, for every fp32 value.

    Valid when the evaluated input was part of the calibration set, so that
    every fp32 activation magnitude is at most ``127 * scale``. Exact-arithmetic
    bound; fp32 rounding of either path is not included.
    """
    g = pg.fused()
    err: Dict[int, float] = {gi.id: 0.0 for gi in g.inputs}
    quant_in: Dict[int, tuple] = {}  # QUANTIZE id -> (scale, upstream error)
    headroom = 1 + 1e-6  # 127 * fl(max/127) may sit an ulp below max
    for n in g.nodes:
        if n.op is Op.QUANTIZE:
            quant_in[n.id] = (float(n.attrs["scale"]), err[n.inputs[0]])
            err[n.id] = float(n.attrs["scale"]) / 2 + err[n.inputs[0]]
        elif n.op in PARAM_OPS and n.info.elem is ElemType.I32:
            s_x, e_x = quant_in[n.inputs[0]]
            s_w = float(n.attrs["w_scale"])
            k = n.conv_spec().reduction_length if n.op is Op.CONV2D else n.weight.shape[1]
            err[n.id] = quant.mac_error_bound(k, s_x, s_w, quant.QMAX * s_w * headroom,
                                              quant.QMAX * s_x * headroom, e_x)
        elif n.op is Op.ADD:
            err[n.id] = err[n.inputs[0]] + err[n.inputs[1]]
        else:
            # relu, pooling, dequantization: 1-Lipschitz in the sup norm
            err[n.id] = err[n.inputs[0]]
    return err
