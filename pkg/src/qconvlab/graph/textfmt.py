"""Line-oriented text format for graphs.

::

    # comment
    input %0 fp32 NCHW 1x3x32x32
    %1 = conv2d(%0) stride=1 padding=1 schedule=nchw_spatial_pack_fp32 weight=fp32:4x3x3x3:0.12,-0.3,...
    %2 = relu(%1)
    %3 = add(%1, %2)
    output %3

Weights are written inline (shortest round-tripping decimal for float32,
plain integers for int8 codes). A reader may also write
``weight=fp32:4x3x3x3:uniform@SEED`` to draw the tensor from
``uniform(-0.5, 0.5)`` with that seed instead of listing it.
"""

from __future__ import annotations

import re
from typing import TextIO

import numpy as np

from ..errors import InvalidArgumentError
from ..kernels import ScheduleKind
from ..tensor import ElemType, Layout
from .ir import GraphInput, GraphIR, Node, Op, ValueInfo, infer

_NODE = re.compile(r"^%(\d+)\s*=\s*(\w+)\(([^)]*)\)\s*(.*)$")
_INPUT = re.compile(r"^input\s+%(\d+)\s+(\w+)\s+(\w+)\s+([\dx]+)$")
_OUTPUT = re.compile(r"^output\s+(.*)$")
_FLOAT_ATTRS = ("scale", "in_scale", "w_scale")
_INT_ATTRS = ("stride", "padding")


def _fmt_float(x) -> str:
    return np.format_float_positional(np.float32(x), unique=True, trim="-")


def _fmt_shape(shape) -> str:
    return "x".join(str(d) for d in shape)


def _fmt_array(arr: np.ndarray) -> str:
    elem = ElemType.from_dtype(arr.dtype)
    if elem is ElemType.FP32:
        body = ",".join(_fmt_float(v) for v in arr.ravel())
    else:
        body = ",".join(str(int(v)) for v in arr.ravel())
    return f"{elem.value}:{_fmt_shape(arr.shape)}:{body}"


def _fmt_attr(key, value) -> str:
    if isinstance(value, np.ndarray):
        return f"{key}={_fmt_array(value)}"
    if isinstance(value, ScheduleKind):
        return f"{key}={value.value}"
    if key in _FLOAT_ATTRS:
        return f"{key}={_fmt_float(value)}"
    return f"{key}={value}"


def dumps(g: GraphIR) -> str:
    lines = ["# qconvlab graph"]
    for gi in g.inputs:
        info = gi.info
        lines.append(f"input %{gi.id} {info.elem.value} {info.layout.name} {_fmt_shape(info.shape)}")
    for n in g.nodes:
        args = ", ".join(f"%{i}" for i in n.inputs)
        attrs = " ".join(_fmt_attr(k, v) for k, v in n.attrs.items())
        lines.append(f"%{n.id} = {n.op.value}({args}) {attrs}".rstrip())
    if g.outputs:
        lines.append("output " + " ".join(f"%{o}" for o in g.outputs))
    return "\n".join(lines) + "\n"


def _parse_shape(text: str) -> tuple:
    try:
        return tuple(int(d) for d in text.split("x"))
    except ValueError:
        raise InvalidArgumentError(f"bad shape {text!r}") from None


def _parse_array(text: str) -> np.ndarray:
    try:
        elem_name, shape_text, body = text.split(":", 2)
    except ValueError:
        raise InvalidArgumentError(f"bad array literal {text[:40]!r}") from None
    elem = ElemType(elem_name)
    shape = _parse_shape(shape_text)
    if body.startswith("uniform@"):
        rng = np.random.default_rng(int(body[len("uniform@"):]))
        return rng.uniform(-0.5, 0.5, size=shape).astype(elem.dtype)
    values = np.array(body.split(","), dtype=np.float64 if elem is ElemType.FP32 else np.int64)
    if values.size != int(np.prod(shape)):
        raise InvalidArgumentError(f"array literal has {values.size} values for shape {shape}")
    return values.astype(elem.dtype).reshape(shape)


def _parse_attr(key: str, value: str):
    if key == "weight":
        return _parse_array(value)
    if key == "schedule":
        return ScheduleKind(value)
    if key in _FLOAT_ATTRS:
        return np.float32(value)
    if key in _INT_ATTRS:
        return int(value)
    raise InvalidArgumentError(f"unknown attribute {key!r}")


def loads(text: str) -> GraphIR:
    g = GraphIR()
    infos = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        try:
            if m := _INPUT.match(line):
                vid = int(m.group(1))
                info = ValueInfo(_parse_shape(m.group(4)), ElemType(m.group(2)), Layout.parse(m.group(3)))
                g.inputs.append(GraphInput(vid, info))
                infos[vid] = info
            elif m := _NODE.match(line):
                vid = int(m.group(1))
                op = Op(m.group(2))
                inputs = tuple(int(a.strip().lstrip("%")) for a in m.group(3).split(",") if a.strip())
                attrs = {}
                for tok in m.group(4).split():
                    key, _, value = tok.partition("=")
                    attrs[key] = _parse_attr(key, value)
                info = infer(op, attrs, [infos[i] for i in inputs])
                g.nodes.append(Node(vid, op, inputs, attrs, info))
                infos[vid] = info
            elif m := _OUTPUT.match(line):
                g.outputs.extend(int(tok.lstrip("%")) for tok in m.group(1).split())
            else:
                raise InvalidArgumentError("unrecognized line")
        except (KeyError, ValueError) as exc:
            raise InvalidArgumentError(f"line {lineno}: {exc}") from None
    g.validate()
    return g


def dump(g: GraphIR, fp: TextIO) -> None:
    fp.write(dumps(g))


def load(fp: TextIO) -> GraphIR:
    return loads(fp.read())
