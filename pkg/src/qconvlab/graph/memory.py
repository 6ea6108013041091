"""Liveness-based arena planning and an instrumented allocator."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np

from .ir import GraphIR

ALIGNMENT = 64


@dataclass(frozen=True)
class MemoryPlan:
    """Byte ranges of every node output inside a single arena."""

    assignments: Dict[int, Tuple[int, int]]  # node id -> (offset, size)
    arena_size: int
    lifetimes: Dict[int, Tuple[int, int]] = field(default_factory=dict)  # node id -> (def step, last use step)

    def peak_live_bytes(self) -> int:
        steps = {t for span in self.lifetimes.values() for t in span}
        return max(
            (sum(self.assignments[v][1] for v, (a, b) in self.lifetimes.items() if a <= t <= b) for t in steps),
            default=0,
        )


def lifetimes(g: GraphIR) -> Dict[int, Tuple[int, int]]:
    """Step interval during which each node output must stay intact.

    A value is defined at its node's position and dies after its last
    consumer runs; graph outputs live to the end.
    """
    step = {n.id: i for i, n in enumerate(g.nodes)}
    end = len(g.nodes)
    spans = {n.id: [i, i] for i, n in enumerate(g.nodes)}
    for n in g.nodes:
        for src in n.inputs:
            if src in spans:
                spans[src][1] = max(spans[src][1], step[n.id])
    for out in g.outputs:
        if out in spans:
            spans[out][1] = end
    return {k: (a, b) for k, (a, b) in spans.items()}


def _align(x: int) -> int:
    return -(-x // ALIGNMENT) * ALIGNMENT


def plan_memory(g: GraphIR) -> MemoryPlan:
    """Greedy first-fit over node outputs in execution order.

    Before placing a node's output, blocks whose lifetime ended strictly
    earlier are released; the output then takes the lowest aligned offset
    whose gap fits it.
    """
    spans = lifetimes(g)
    live: List[Tuple[int, int, int]] = []  # (offset, size, last use)
    assignments: Dict[int, Tuple[int, int]] = {}
    arena = 0
    for step, node in enumerate(g.nodes):
        live = [blk for blk in live if blk[2] >= step]
        size = node.info.nbytes
        offset = 0
        for blk_off, blk_size, _ in sorted(live):
            if offset + size <= blk_off:
                break
            offset = max(offset, _align(blk_off + blk_size))
        live.append((offset, size, spans[node.id][1]))
        assignments[node.id] = (offset, size)
        arena = max(arena, offset + size)
    return MemoryPlan(assignments, arena, spans)


def check_plan(g: GraphIR, plan: MemoryPlan) -> None:
    """Raise if two values with overlapping lifetimes share bytes."""
    spans = lifetimes(g)
    ids = list(plan.assignments)
    for i, a in enumerate(ids):
        oa, sa = plan.assignments[a]
        if oa + sa > plan.arena_size:
            raise AssertionError(f"value {a} overruns the arena")
        for b in ids[i + 1:]:
            ob, sb = plan.assignments[b]
            time_overlap = spans[a][0] <= spans[b][1] and spans[b][0] <= spans[a][1]
            byte_overlap = oa < ob + sb and ob < oa + sa
            if time_overlap and byte_overlap:
                raise AssertionError(f"values {a} and {b} are live together and overlap")


class Allocator:
    """Hands out numpy buffers and counts every request."""

    def __init__(self):
        self.count = 0
        self.bytes = 0

    def empty(self, shape, dtype) -> np.ndarray:
        arr = np.empty(shape, dtype=dtype)
        self.count += 1
        self.bytes += arr.nbytes
        return arr

    def zeros(self, shape, dtype) -> np.ndarray:
        arr = np.zeros(shape, dtype=dtype)
        self.count += 1
        self.bytes += arr.nbytes
        return arr
