"""Three ways to run a graph.

``interpret``
    Naive evaluation into a dict of values; the oracle for the other two.
``StaticExecutor``
    Plans memory once, pre-packs every weight, and binds each node to a fixed
    view of a single arena. After the one-time arena allocation an inference
    allocates no executor buffers at all.
``VMExecutor``
    Invokes the prefix, middle and suffix segments of a partitioned graph as
    separate functions. Each call infers shapes, packs weights and allocates
    its intermediates and outputs afresh.

Both executors call the same kernels in the same order, so their results are
bit-identical.
"""

from __future__ import annotations

from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from ..errors import ShapeError
from .ir import GraphIR, infer
from .memory import Allocator, MemoryPlan, plan_memory
from .ops import evaluate, prepack
from .partition import PartitionedGraph


def _bind_inputs(graph_inputs, inputs: Sequence[np.ndarray]) -> Dict[int, np.ndarray]:
    if len(inputs) != len(graph_inputs):
        raise ShapeError(f"graph takes {len(graph_inputs)} input(s), got {len(inputs)}")
    env = {}
    for gi, arr in zip(graph_inputs, inputs):
        arr = np.asarray(arr)
        if arr.shape != gi.info.shape or arr.dtype != gi.info.elem.dtype:
            raise ShapeError(
                f"input {gi.id}: expected {gi.info.shape} {gi.info.elem.value}, got {arr.shape} {arr.dtype}"
            )
        env[gi.id] = arr
    return env


def _as_graph(g: Union[GraphIR, PartitionedGraph]) -> GraphIR:
    return g.fused() if isinstance(g, PartitionedGraph) else g


def interpret(g: Union[GraphIR, PartitionedGraph], inputs: Sequence[np.ndarray], record: bool = False):
    """Evaluate node by node. With ``record`` also return every value by id."""
    g = _as_graph(g)
    env = _bind_inputs(g.inputs, inputs)
    infos = g.value_infos()
    for n in g.nodes:
        env[n.id] = evaluate(n, [env[i] for i in n.inputs], [infos[i] for i in n.inputs])
    outputs = [env[o] for o in g.outputs]
    return (outputs, env) if record else outputs


class StaticExecutor:
    def __init__(self, g: Union[GraphIR, PartitionedGraph], plan: Optional[MemoryPlan] = None):
        self.graph = _as_graph(g)
        self.graph.validate()
        self.plan = plan if plan is not None else plan_memory(self.graph)
        missing = {n.id for n in self.graph.nodes} - set(self.plan.assignments)
        if missing:
            raise ShapeError(f"memory plan does not cover nodes {sorted(missing)}")
        self.allocator = Allocator()
        self._infos = self.graph.value_infos()
        self._packed = {n.id: prepack(n) for n in self.graph.nodes}
        self._arena: Optional[np.ndarray] = None
        self._views: Dict[int, np.ndarray] = {}

    def _warm_up(self) -> None:
        self._arena = self.allocator.empty(self.plan.arena_size, np.uint8)
        for n in self.graph.nodes:
            offset, size = self.plan.assignments[n.id]
            raw = self._arena[offset:offset + size]
            self._views[n.id] = raw.view(n.info.elem.dtype).reshape(n.info.shape)

    @property
    def arena_bytes(self) -> int:
        return self.plan.arena_size

    def run(self, inputs: Sequence[np.ndarray]) -> List[np.ndarray]:
        """Run one inference.

        Returned arrays that are node outputs are views into the arena and
        are overwritten by the next call; copy them to keep them.
        """
        if self._arena is None:
            self._warm_up()
        env = _bind_inputs(self.graph.inputs, inputs)
        views, infos = self._views, self._infos
        for n in self.graph.nodes:
            result = evaluate(n, [env.get(i, views.get(i)) for i in n.inputs], [infos[i] for i in n.inputs],
                              self._packed[n.id])
            np.copyto(views[n.id], result)
        return [env[o] if o in env else views[o] for o in self.graph.outputs]


class VMExecutor:
    def __init__(self, pg: PartitionedGraph):
        for seg in pg.segments():
            seg.validate()
        self.pg = pg
        self.allocator = Allocator()

    def _call(self, seg: GraphIR, args: Dict[int, np.ndarray]) -> Dict[int, np.ndarray]:
        # runtime shape inference, weight lowering and fresh buffers on every call
        infos = {gi.id: gi.info for gi in seg.inputs}
        local = dict(args)
        for n in seg.nodes:
            in_infos = [infos[i] for i in n.inputs]
            info = infer(n.op, n.attrs, in_infos)
            infos[n.id] = info
            buf = self.allocator.empty(info.shape, info.elem.dtype)
            np.copyto(buf, evaluate(n, [local[i] for i in n.inputs], in_infos, prepack(n)))
            local[n.id] = buf
        return {o: local[o] for o in seg.outputs}

    def run(self, inputs: Sequence[np.ndarray]) -> List[np.ndarray]:
        env = _bind_inputs(self.pg.inputs, inputs)
        for seg in self.pg.segments():
            if seg.nodes:
                env.update(self._call(seg, {gi.id: env[gi.id] for gi in seg.inputs}))
        return [env[o] for o in self.pg.outputs]


def run_static(g: Union[GraphIR, PartitionedGraph], plan: Optional[MemoryPlan], inputs) -> List[np.ndarray]:
    """One-shot static execution; outputs are copied out of the arena."""
    return [np.array(o) for o in StaticExecutor(g, plan).run(inputs)]


def run_vm(pg: PartitionedGraph, inputs) -> List[np.ndarray]:
    return VMExecutor(pg).run(inputs)
