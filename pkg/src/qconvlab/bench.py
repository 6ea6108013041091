"""Benchmark harness: epoch protocol, metric formulas, memory model, reports."""

from __future__ import annotations

import csv
import hashlib
import io
import math
import time
from dataclasses import dataclass, field, replace
from typing import Iterable, List, Optional, Sequence

import numpy as np

from .errors import InvalidArgumentError, NotApplicableError
from .graph import GraphIR, Op, PartitionedGraph, StaticExecutor, VMExecutor, partition, quantize_pass
from .kernels import DOT_LANES, INT8_COUNTERPART, PANEL_ROWS, ROW_GROUP, ScheduleKind
from .model import DEFAULT_SCHEDULES, MiniResNetConfig, build_mini_resnet, synthetic_batch
from .tensor import DEFAULT_BLOCK, NCHW, NHWC, ElemType, Layout

DEFAULT_EPOCHS = 110
DEFAULT_WARMUP = 10
BATCH_SIZES = (1, 64, 256)
SCALE_BYTES = 4

# Expected ideal speedups, kept as a lookup to cross-check ideal_speedup().
EXPECTED_IDEAL_SPEEDUP = {
    ScheduleKind.NCHW_SPATIAL_PACK_FP32: 16,
    ScheduleKind.NCHW_SPATIAL_PACK_I8: 16,
    ScheduleKind.NCHW_SIMD_I8: 16,
    ScheduleKind.NHWC_SPATIAL_PACK_FP32: 4,
    ScheduleKind.NHWC_QUANTIZED_INTERLEAVED_I8: 16,
}

# schedule -> (H-axis parallel factor, lane/block factor)
_PARALLELISM = {
    ScheduleKind.NCHW_SPATIAL_PACK_FP32: (ROW_GROUP, DEFAULT_BLOCK // ROW_GROUP),
    ScheduleKind.NCHW_SPATIAL_PACK_I8: (ROW_GROUP, DEFAULT_BLOCK // ROW_GROUP),
    ScheduleKind.NCHW_SIMD_I8: (ROW_GROUP, DOT_LANES),
    ScheduleKind.NHWC_SPATIAL_PACK_FP32: (ROW_GROUP, 1),
    ScheduleKind.NHWC_QUANTIZED_INTERLEAVED_I8: (PANEL_ROWS, PANEL_ROWS),
}


def improvement(baseline_ms: float, t_ms: float) -> float:
    """Speed relative to the baseline in percent: 100 * baseline / t.

    Truncated (not rounded) to two decimals: 19.65 ms vs 11.99 ms gives
    163.88, not 163.89.
    """
    if not (baseline_ms > 0 and t_ms > 0):
        raise InvalidArgumentError(f"times must be positive, got {baseline_ms} and {t_ms}")
    return math.floor(100.0 * baseline_ms / t_ms * 100.0 + 1e-6) / 100.0


def ideal_speedup(schedule: ScheduleKind) -> int:
    """Theoretical factor of a schedule: H-parallelism times lane/block width.

    NCHW spatial pack: 4 row groups x 16-channel blocks worth 4x on 4-wide
    units; simd: 4 row groups x 4 int8 lanes; NHWC spatial pack: 4 row
    groups only; quantized interleaved: 4 fused pixels x 4x4 tiles.
    """
    if schedule not in _PARALLELISM:
        raise NotApplicableError(f"{schedule.value} has no ideal speedup")
    h_factor, lane_factor = _PARALLELISM[schedule]
    return h_factor * lane_factor


def weight_memory_bytes(g, precision: str, include_scales: bool = True) -> int:
    """Bytes needed to store the parameters of ``g`` at ``precision``.

    fp32 stores 4 bytes per element; int8 stores 1 byte per element plus one
    4-byte fp32 scale per parameter tensor.
    """
    if isinstance(g, PartitionedGraph):
        g = g.fused()
    params = [n.weight for n in g.nodes if n.op in (Op.CONV2D, Op.DENSE)]
    elems = sum(int(w.size) for w in params)
    if precision == "fp32":
        return elems * ElemType.FP32.nbytes
    if precision == "int8":
        return elems * ElemType.I8.nbytes + (SCALE_BYTES * len(params) if include_scales else 0)
    raise InvalidArgumentError(f"unknown precision {precision!r}")


def activation_bytes(g) -> int:
    """Bytes of fp32 activations between layers.

    Int8 codes and int32 accumulators are kernel-local scratch: each one is
    produced from an fp32 activation and immediately turned back into one.
    """
    if isinstance(g, PartitionedGraph):
        g = g.fused()
    return sum(n.info.nbytes for n in g.nodes if n.info.elem is ElemType.FP32)


def scratch_bytes(g) -> int:
    if isinstance(g, PartitionedGraph):
        g = g.fused()
    return sum(n.info.nbytes for n in g.nodes if n.info.elem is not ElemType.FP32)


@dataclass(frozen=True)
class BenchConfig:
    epochs: int = DEFAULT_EPOCHS
    warmup: int = DEFAULT_WARMUP
    batch: int = 1
    layout: Layout = NCHW
    schedule: Optional[ScheduleKind] = None  # None: the layout's default spatial pack
    precision: str = "fp32"
    executor: str = "static"
    seed: int = 0
    model: MiniResNetConfig = field(default_factory=MiniResNetConfig)
    graph: Optional[GraphIR] = None  # overrides the mini-resnet build
    tag: str = ""

    def validate(self) -> None:
        if self.warmup < 0 or self.epochs <= self.warmup:
            raise InvalidArgumentError(f"need 0 <= warmup < epochs, got {self.warmup}/{self.epochs}")
        if self.batch <= 0:
            raise InvalidArgumentError("batch must be positive")
        if self.precision not in ("fp32", "int8"):
            raise InvalidArgumentError(f"precision must be fp32 or int8, got {self.precision!r}")
        if self.executor not in ("static", "vm"):
            raise InvalidArgumentError(f"executor must be static or vm, got {self.executor!r}")
        if self.layout not in (NCHW, NHWC):
            raise InvalidArgumentError(f"layout must be NCHW or NHWC, got {self.layout}")
        s = self.schedule
        if s is not None:
            if s.layout != self.layout:
                raise InvalidArgumentError(f"{s.value} does not run on {self.layout}")
            if s is ScheduleKind.DIRECT_FP32_REFERENCE and self.precision != "fp32":
                raise InvalidArgumentError("the direct reference is fp32 only")
            if s.precision is ElemType.I8 and self.precision != "int8":
                raise InvalidArgumentError(f"{s.value} needs precision int8")

    @property
    def measured_epochs(self) -> int:
        return self.epochs - self.warmup

    def conv_schedules(self) -> tuple:
        """(fp32 schedule used to build, int8 override or None)."""
        s = self.schedule
        if s is None:
            return None, None
        if s.precision is ElemType.I8:
            return None, s
        return s, None

    def effective_schedule(self) -> ScheduleKind:
        fp32, int8 = self.conv_schedules()
        fp32 = fp32 or DEFAULT_SCHEDULES[self.layout]
        if self.precision == "fp32":
            return fp32
        return int8 or INT8_COUNTERPART[fp32]


@dataclass
class BenchResult:
    tag: str
    layout: str
    schedule: str
    precision: str
    executor: str
    batch: int
    mean_ms: float
    std_ms: float
    timed_epochs: int
    allocs_per_inference: float
    weight_bytes: int
    activation_bytes: int
    scratch_bytes: int
    arena_bytes: int
    output_digest: str
    epoch_ms: List[float] = field(default_factory=list, repr=False)

    @property
    def ideal_speedup(self) -> Optional[int]:
        try:
            return ideal_speedup(ScheduleKind(self.schedule))
        except NotApplicableError:
            return None


def _build(cfg: BenchConfig):
    fp32_schedule, int8_schedule = cfg.conv_schedules()
    if cfg.graph is not None:
        g = cfg.graph
        batch = g.inputs[0].info.shape[0]
    else:
        g = build_mini_resnet(cfg.model, cfg.layout, cfg.batch, fp32_schedule)
        batch = cfg.batch
    return g, batch, int8_schedule


def _inputs_for(g: GraphIR, cfg: BenchConfig, rng: np.random.Generator) -> List[np.ndarray]:
    if cfg.graph is None:
        return [synthetic_batch(cfg.model, cfg.layout, cfg.batch, rng)]
    return [rng.standard_normal(gi.info.shape).astype(np.float32) for gi in g.inputs]


class _Session:
    """One configured executor plus the state of its epoch loop."""

    def __init__(self, cfg: BenchConfig):
        cfg.validate()
        self.cfg = cfg
        self.graph, self.batch, int8_schedule = _build(cfg)
        self.rng = np.random.default_rng(cfg.seed)
        if cfg.precision == "int8":
            calibration = _inputs_for(self.graph, cfg, np.random.default_rng([cfg.seed, 1]))
            self.program = quantize_pass(self.graph, [calibration], int8_schedule)
        else:
            self.program = self.graph if cfg.executor == "static" else partition(self.graph)
        if cfg.executor == "static":
            self.executor = StaticExecutor(self.program)
            self.arena = self.executor.arena_bytes
        else:
            self.executor = VMExecutor(self.program)
            self.arena = 0
        self.digest = hashlib.sha256()
        self.times: List[float] = []
        self.epoch = 0
        self.allocs_before = None

    def step(self) -> None:
        """Run one epoch; time it unless it is a warm-up epoch."""
        inputs = _inputs_for(self.graph, self.cfg, self.rng)
        if self.epoch == self.cfg.warmup:
            self.allocs_before = self.executor.allocator.count
        start = time.perf_counter_ns()
        outputs = self.executor.run(inputs)
        elapsed = time.perf_counter_ns() - start
        if self.epoch >= self.cfg.warmup:
            self.times.append(elapsed / 1e6)
        for out in outputs:
            self.digest.update(np.ascontiguousarray(out).tobytes())
        self.epoch += 1

    def result(self) -> BenchResult:
        cfg, times = self.cfg, self.times
        allocs = (self.executor.allocator.count - self.allocs_before) / len(times)
        schedule = cfg.effective_schedule() if cfg.graph is None else _graph_schedule(self.program)
        return BenchResult(
            tag=cfg.tag or _default_tag(cfg, schedule, self.batch),
            layout=cfg.layout.name if cfg.graph is None else self.graph.inputs[0].info.layout.name,
            schedule=schedule.value if schedule else "-",
            precision=cfg.precision,
            executor=cfg.executor,
            batch=self.batch,
            mean_ms=float(np.mean(times)),
            std_ms=float(np.std(times)),
            timed_epochs=len(times),
            allocs_per_inference=allocs,
            weight_bytes=weight_memory_bytes(self.graph, cfg.precision),
            activation_bytes=activation_bytes(self.program),
            scratch_bytes=scratch_bytes(self.program),
            arena_bytes=self.arena,
            output_digest=self.digest.hexdigest(),
            epoch_ms=times,
        )


def run_benchmark(cfg: BenchConfig) -> BenchResult:
    """Time ``cfg.epochs`` inferences and report statistics over the non-warm-up ones.

    Each epoch runs one freshly drawn synthetic batch; generating it is not
    timed. int8 configurations are calibrated on a separate seeded batch.
    """
    session = _Session(cfg)
    for _ in range(cfg.epochs):
        session.step()
    return session.result()


def _graph_schedule(g) -> Optional[ScheduleKind]:
    if isinstance(g, PartitionedGraph):
        g = g.fused()
    kinds = {n.attrs["schedule"] for n in g.nodes if n.op is Op.CONV2D}
    return kinds.pop() if len(kinds) == 1 else None


def _default_tag(cfg: BenchConfig, schedule: Optional[ScheduleKind], batch: int) -> str:
    name = schedule.value if schedule else "graph"
    return f"{name}-{cfg.precision}-{cfg.executor}-b{batch}"


# --------------------------------------------------------------------------
# reporting

REPORT_COLUMNS = [
    "tag", "layout", "schedule", "precision", "executor", "batch",
    "time_ms", "improvement_pct", "ideal_speedup", "weight_bytes",
    "std_ms", "allocs_per_inference", "activation_bytes",
]

REPORT_NOTE = "Times are mean milliseconds per epoch (one batch), warm-up epochs excluded."


def format_ms(ms: float) -> str:
    """Two decimals; more digits only when that would print 0.00."""
    text = f"{ms:.2f}"
    return text if float(text) > 0 else f"{ms:.3g}"


def result_rows(results: Sequence[BenchResult], baseline: str) -> List[dict]:
    """Report rows. Improvement is computed from the printed times so that
    the table can be re-derived from its own columns."""
    base = [r for r in results if r.tag == baseline]
    if not base:
        raise InvalidArgumentError(f"baseline tag {baseline!r} not among results")
    base_ms = float(format_ms(base[0].mean_ms))
    rows = []
    for r in results:
        speedup = r.ideal_speedup
        rows.append({
            "tag": r.tag,
            "layout": r.layout,
            "schedule": r.schedule,
            "precision": r.precision,
            "executor": r.executor,
            "batch": r.batch,
            "time_ms": format_ms(r.mean_ms),
            "improvement_pct": f"{improvement(base_ms, float(format_ms(r.mean_ms))):.2f}",
            "ideal_speedup": f"{speedup}x" if speedup else "-",
            "weight_bytes": r.weight_bytes,
            "std_ms": f"{r.std_ms:.2f}",
            "allocs_per_inference": f"{r.allocs_per_inference:g}",
            "activation_bytes": r.activation_bytes,
        })
    return rows


def render_report(results: Sequence[BenchResult], baseline: str, fmt: str = "md") -> str:
    """Table of results with improvement relative to the ``baseline`` tag."""
    return render_rows(result_rows(results, baseline), fmt)


def render_rows(rows: Iterable[dict], fmt: str = "md") -> str:
    rows = list(rows)
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=REPORT_COLUMNS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
        return buf.getvalue()
    if fmt != "md":
        raise InvalidArgumentError(f"unknown format {fmt!r}")
    lines = [REPORT_NOTE, "", "| " + " | ".join(REPORT_COLUMNS) + " |",
             "|" + "|".join("---" for _ in REPORT_COLUMNS) + "|"]
    for row in rows:
        lines.append("| " + " | ".join(str(row[c]) for c in REPORT_COLUMNS) + " |")
    return "\n".join(lines) + "\n"


def rows_from_csv(text: str) -> List[dict]:
    reader = csv.DictReader(io.StringIO(text))
    missing = set(REPORT_COLUMNS) - set(reader.fieldnames or ())
    if missing:
        raise InvalidArgumentError(f"csv is missing columns {sorted(missing)}")
    return list(reader)


def summarize_rows(rows: Sequence[dict], baseline: Optional[str] = None) -> List[dict]:
    """Recompute the improvement column of saved rows against ``baseline``."""
    if not rows:
        raise InvalidArgumentError("no rows to summarize")
    baseline = baseline or rows[0]["tag"]
    base = [r for r in rows if r["tag"] == baseline]
    if not base:
        raise InvalidArgumentError(f"baseline tag {baseline!r} not among rows")
    base_ms = float(base[0]["time_ms"])
    out = []
    for r in rows:
        r = dict(r)
        r["improvement_pct"] = f"{improvement(base_ms, float(r['time_ms'])):.2f}"
        out.append(r)
    return out


def merge_results(parts: Sequence[BenchResult]) -> BenchResult:
    """Pool repeated runs of one configuration into a single result."""
    first = parts[0]
    if any(p.tag != first.tag for p in parts):
        raise InvalidArgumentError("can only merge runs of the same configuration")
    times = [t for p in parts for t in p.epoch_ms]
    merged = BenchResult(**{k: v for k, v in vars(first).items() if k != "epoch_ms"})
    merged.mean_ms = float(np.mean(times))
    merged.std_ms = float(np.std(times))
    merged.timed_epochs = len(times)
    merged.allocs_per_inference = float(np.mean([p.allocs_per_inference for p in parts]))
    merged.epoch_ms = times
    return merged


def compare_executors(cfg: BenchConfig, rounds: int = 1) -> tuple:
    """Benchmark ``cfg`` under the static and the vm executor side by side.

    Both executors follow the full epoch protocol, interleaved one epoch at
    a time in static, vm, vm, static order, so bursts of host load land on
    both alike. ``rounds`` repeats the whole protocol and pools the epochs.
    """
    if rounds <= 0:
        raise InvalidArgumentError("rounds must be positive")
    runs = {"static": [], "vm": []}
    for _ in range(rounds):
        sessions = {e: _Session(replace(cfg, executor=e, tag="")) for e in ("static", "vm")}
        for epoch in range(cfg.epochs):
            order = ("static", "vm") if epoch % 2 == 0 else ("vm", "static")
            for executor in order:
                sessions[executor].step()
        for executor, session in sessions.items():
            runs[executor].append(session.result())
    return merge_results(runs["static"]), merge_results(runs["vm"])
