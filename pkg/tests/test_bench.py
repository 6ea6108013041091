import csv
import io
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qconvlab import bench
from qconvlab.bench import BenchConfig, BenchResult, improvement, ideal_speedup, render_report, weight_memory_bytes
from qconvlab.errors import InvalidArgumentError, NotApplicableError
from qconvlab.graph import GraphIR, Op, quantize_pass
from qconvlab.kernels import ScheduleKind
from qconvlab.model import MiniResNetConfig, build_mini_resnet, synthetic_batch
from qconvlab.tensor import NCHW, NHWC

SMALL = MiniResNetConfig(stem_channels=4, input_size=8)


def quick(**kw):
    kw.setdefault("epochs", 4)
    kw.setdefault("warmup", 1)
    kw.setdefault("model", SMALL)
    return BenchConfig(**kw)


def fake_result(tag, ms, schedule=ScheduleKind.NCHW_SPATIAL_PACK_FP32):
    return BenchResult(tag=tag, layout="NCHW", schedule=schedule.value, precision="fp32", executor="static",
                       batch=1, mean_ms=ms, std_ms=0.0, timed_epochs=100, allocs_per_inference=0.0,
                       weight_bytes=0, activation_bytes=0, scratch_bytes=0, arena_bytes=0, output_digest="")


# ---------------------------------------------------------------- metrics


@pytest.mark.parametrize("base, t, expected", [(13.29, 8.27, 160.70), (19.65, 11.99, 163.88), (22.15, 11.36, 194.98)])
def test_improvement_table_values(base, t, expected):
    assert f"{improvement(base, t):.2f}" == f"{expected:.2f}"


@pytest.mark.parametrize("args", [(0, 1), (1, 0), (-1, 2), (float("nan"), 1)])
def test_improvement_rejects_non_positive(args):
    with pytest.raises(InvalidArgumentError):
        improvement(*args)


@given(st.floats(1e-3, 1e4))
def test_improvement_identity(x):
    assert improvement(x, x) == 100.0


@given(st.floats(1e-2, 1e3), st.floats(1e-2, 1e3), st.floats(1e-2, 1e3))
def test_improvement_monotone_decreasing(base, t1, t2):
    lo, hi = sorted((t1, t2))
    assert improvement(base, lo) >= improvement(base, hi)


def test_ideal_speedup_matches_table():
    for schedule, expected in bench.EXPECTED_IDEAL_SPEEDUP.items():
        assert ideal_speedup(schedule) == expected
    assert len(bench.EXPECTED_IDEAL_SPEEDUP) == 5
    with pytest.raises(NotApplicableError):
        ideal_speedup(ScheduleKind.DIRECT_FP32_REFERENCE)


def test_weight_memory_single_conv():
    g = GraphIR()
    x = g.add_input((1, 3, 4, 4))
    g.outputs = [g.add(Op.CONV2D, [x], weight=np.zeros((4, 3, 3, 3), np.float32), stride=1, padding=1,
                       schedule=ScheduleKind.NCHW_SPATIAL_PACK_FP32)]
    assert weight_memory_bytes(g, "fp32") == 432
    assert weight_memory_bytes(g, "int8") == 108 + 4
    assert weight_memory_bytes(g, "int8", include_scales=False) == 108
    with pytest.raises(InvalidArgumentError):
        weight_memory_bytes(g, "fp16")


def test_weight_memory_empty_graph():
    assert weight_memory_bytes(GraphIR(), "fp32") == weight_memory_bytes(GraphIR(), "int8") == 0


@pytest.mark.parametrize("cfg", [MiniResNetConfig(), SMALL, MiniResNetConfig(stem_channels=64)])
def test_weight_memory_ratio(cfg):
    g = build_mini_resnet(cfg)
    assert weight_memory_bytes(g, "fp32") == 4 * weight_memory_bytes(g, "int8", include_scales=False)
    assert 3.9 < weight_memory_bytes(g, "fp32") / weight_memory_bytes(g, "int8") < 4


def test_weight_memory_ratio_approaches_four():
    ratios = [weight_memory_bytes(build_mini_resnet(MiniResNetConfig(stem_channels=c)), "fp32")
              / weight_memory_bytes(build_mini_resnet(MiniResNetConfig(stem_channels=c)), "int8") for c in (2, 8, 32)]
    assert ratios == sorted(ratios) and ratios[-1] < 4


def test_activation_bytes_equal_across_precisions():
    cfg = MiniResNetConfig()
    g = build_mini_resnet(cfg)
    pg = quantize_pass(g, [synthetic_batch(cfg, NCHW, 1, np.random.default_rng(0))])
    assert bench.activation_bytes(pg) == bench.activation_bytes(g)
    assert bench.scratch_bytes(g) == 0 < bench.scratch_bytes(pg)


# ---------------------------------------------------------------- config and runs


@pytest.mark.parametrize("kw", [
    dict(epochs=10, warmup=10), dict(warmup=-1), dict(batch=0), dict(precision="fp16"), dict(executor="jit"),
    dict(schedule=ScheduleKind.NHWC_SPATIAL_PACK_FP32),
    dict(schedule=ScheduleKind.NCHW_SIMD_I8),
    dict(schedule=ScheduleKind.DIRECT_FP32_REFERENCE, precision="int8"),
])
def test_invalid_config(kw):
    with pytest.raises(InvalidArgumentError):
        bench.run_benchmark(replace(quick(), **kw))


def test_default_protocol():
    cfg = BenchConfig()
    assert (cfg.epochs, cfg.warmup, cfg.measured_epochs) == (110, 10, 100)


def test_timed_epoch_count():
    r = bench.run_benchmark(quick(epochs=7, warmup=3))
    assert r.timed_epochs == 4 == len(r.epoch_ms)
    assert r.mean_ms == pytest.approx(np.mean(r.epoch_ms))


@pytest.mark.parametrize("layout, schedule", [
    (NCHW, None), (NCHW, ScheduleKind.NCHW_SIMD_I8), (NHWC, None),
])
def test_static_int8_allocates_nothing(layout, schedule):
    r = bench.run_benchmark(quick(layout=layout, schedule=schedule, precision="int8"))
    assert r.allocs_per_inference == 0
    assert r.precision == "int8" and r.arena_bytes > 0


def test_vm_allocates_every_inference():
    r = bench.run_benchmark(quick(precision="int8", executor="vm"))
    assert r.allocs_per_inference >= 2


def test_same_seed_same_outputs():
    a = bench.run_benchmark(quick(precision="int8", seed=3))
    b = bench.run_benchmark(quick(precision="int8", seed=3))
    c = bench.run_benchmark(quick(precision="int8", seed=4))
    assert a.output_digest == b.output_digest != c.output_digest
    assert bench.run_benchmark(quick(precision="int8", seed=3, executor="vm")).output_digest == a.output_digest


def test_effective_schedule_names():
    assert quick(precision="int8").effective_schedule() is ScheduleKind.NCHW_SPATIAL_PACK_I8
    assert quick(layout=NHWC, precision="int8").effective_schedule() is ScheduleKind.NHWC_QUANTIZED_INTERLEAVED_I8
    r = bench.run_benchmark(quick(layout=NHWC))
    assert r.schedule == "nhwc_spatial_pack_fp32" and r.ideal_speedup == 4


def test_custom_graph_config():
    g = build_mini_resnet(SMALL, NCHW, 2)
    r = bench.run_benchmark(quick(graph=g))
    assert r.batch == 2 and r.schedule == "nchw_spatial_pack_fp32"


def test_compare_executors_pools_rounds():
    static, vm = bench.compare_executors(quick(precision="int8"), rounds=2)
    assert (static.executor, vm.executor) == ("static", "vm")
    assert static.timed_epochs == vm.timed_epochs == 6
    assert static.output_digest == vm.output_digest
    with pytest.raises(InvalidArgumentError):
        bench.compare_executors(quick(), rounds=0)


# ---------------------------------------------------------------- reports


def test_report_self_baseline():
    text = render_report([fake_result("a", 5.0)], "a", "csv")
    rows = list(csv.DictReader(io.StringIO(text)))
    assert rows[0]["improvement_pct"] == "100.00"


def test_report_table1_rows():
    results = [fake_result("tvm", 13.29), fake_result("tvm-quant-graph", 8.27, ScheduleKind.NCHW_SPATIAL_PACK_I8)]
    rows = list(csv.DictReader(io.StringIO(render_report(results, "tvm", "csv"))))
    assert [r["improvement_pct"] for r in rows] == ["100.00", "160.70"]
    assert rows[1]["ideal_speedup"] == "16x"


def test_report_csv_format_contract():
    results = [fake_result(f"r{i}", 1.0 + i) for i in range(3)]
    text = render_report(results, "r0", "csv")
    lines = text.strip().splitlines()
    assert lines[0].split(",") == bench.REPORT_COLUMNS
    assert len(lines) == 4
    assert len(bench.rows_from_csv(text)) == 3


def test_report_markdown_and_errors():
    text = render_report([fake_result("a", 2.0), fake_result("b", 1.0, ScheduleKind.DIRECT_FP32_REFERENCE)], "a")
    assert bench.REPORT_NOTE in text
    assert "| b |" in text and "200.00" in text and "| - |" in text
    with pytest.raises(InvalidArgumentError):
        render_report([fake_result("a", 2.0)], "missing")
    with pytest.raises(InvalidArgumentError):
        render_report([fake_result("a", 2.0)], "a", "html")


def test_summarize_rows_rebases():
    text = render_report([fake_result("a", 4.0), fake_result("b", 2.0)], "a", "csv")
    rows = bench.summarize_rows(bench.rows_from_csv(text), "b")
    assert [r["improvement_pct"] for r in rows] == ["50.00", "100.00"]
    with pytest.raises(InvalidArgumentError):
        bench.summarize_rows([])
    with pytest.raises(InvalidArgumentError):
        bench.rows_from_csv("a,b\n1,2\n")


def test_improvement_consistent_with_printed_times():
    results = [fake_result("a", 7.004999), fake_result("b", 4.2049)]
    rows = list(csv.DictReader(io.StringIO(render_report(results, "a", "csv"))))
    assert [r["time_ms"] for r in rows] == ["7.00", "4.20"]
    assert rows[1]["improvement_pct"] == f"{improvement(7.00, 4.20):.2f}"
    assert bench.summarize_rows(rows)[1]["improvement_pct"] == rows[1]["improvement_pct"]


def test_tiny_times_keep_significant_digits():
    rows = bench.result_rows([fake_result("a", 0.0012), fake_result("b", 0.0006)], "a")
    assert rows[0]["time_ms"] == "0.0012" and rows[1]["improvement_pct"] == "200.00"
