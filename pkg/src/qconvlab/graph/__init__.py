"""Graph IR, quantization partitioning, memory planning and executors."""

from .executor import StaticExecutor, VMExecutor, interpret, run_static, run_vm
from .ir import GraphInput, GraphIR, Node, Op, ValueInfo, infer
from .memory import Allocator, MemoryPlan, check_plan, lifetimes, plan_memory
from .partition import PartitionedGraph, partition, quantization_error_bound, quantize_pass
from .textfmt import dumps, loads, load, dump

__all__ = [
    "Allocator", "GraphIR", "GraphInput", "MemoryPlan", "Node", "Op", "PartitionedGraph",
    "StaticExecutor", "VMExecutor", "ValueInfo", "check_plan", "dump", "dumps", "infer",
    "interpret", "lifetimes", "load", "loads", "partition", "plan_memory",
    "quantization_error_bound", "quantize_pass", "run_static", "run_vm",
]
