"""Command line: ``qconvlab {bench,verify,report,graph}``.

Exit codes: 0 success, 1 verification failure, 2 invalid arguments.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import graph as graphmod
from .bench import BenchConfig, render_report, render_rows, rows_from_csv, run_benchmark, summarize_rows
from .errors import QConvLabError
from .kernels import ScheduleKind
from .model import MiniResNetConfig, build_mini_resnet
from .oracles import consensus_suite
from .tensor import NCHW, NHWC

EXIT_OK, EXIT_VERIFY_FAILED, EXIT_USAGE = 0, 1, 2

_SCHEDULES = {
    ("nchw", "spatial-pack", "fp32"): ScheduleKind.NCHW_SPATIAL_PACK_FP32,
    ("nchw", "spatial-pack", "int8"): ScheduleKind.NCHW_SPATIAL_PACK_I8,
    ("nchw", "simd", "int8"): ScheduleKind.NCHW_SIMD_I8,
    ("nchw", "direct", "fp32"): ScheduleKind.DIRECT_FP32_REFERENCE,
    ("nhwc", "spatial-pack", "fp32"): ScheduleKind.NHWC_SPATIAL_PACK_FP32,
    ("nhwc", "quantized-interleaved", "int8"): ScheduleKind.NHWC_QUANTIZED_INTERLEAVED_I8,
}


class UsageError(Exception):
    pass


def resolve_schedule(layout: str, schedule: Optional[str], precision: str) -> Optional[ScheduleKind]:
    if schedule is None:
        return None
    try:
        return _SCHEDULES[(layout, schedule, precision)]
    except KeyError:
        raise UsageError(f"schedule {schedule} is not available for {layout} {precision}") from None


def _positive(text: str) -> int:
    value = int(text)
    if value <= 0:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _non_negative(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qconvlab", description="int8 convolution schedule lab")
    sub = parser.add_subparsers(dest="command", required=True)

    b = sub.add_parser("bench", help="time one configuration")
    b.add_argument("--layout", choices=["nchw", "nhwc"], default="nchw")
    b.add_argument("--schedule", choices=["spatial-pack", "simd", "quantized-interleaved", "direct"])
    b.add_argument("--precision", choices=["fp32", "int8"], default="fp32")
    b.add_argument("--executor", choices=["static", "vm"], default="static")
    b.add_argument("--batch", type=_positive, default=1)
    b.add_argument("--epochs", type=_positive, default=110)
    b.add_argument("--warmup", type=_non_negative, default=10)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--format", choices=["csv", "md"], default="md")
    b.add_argument("--graph", type=Path, help="graph text file to run instead of the mini-resnet")
    b.add_argument("--tag", default="")
    b.add_argument("-o", "--output", type=Path)

    v = sub.add_parser("verify", help="run the schedule consensus suite")
    v.add_argument("--cases", type=_positive, default=100)
    v.add_argument("--seed", type=int, default=0)

    r = sub.add_parser("report", help="summarize saved bench CSV files")
    r.add_argument("files", nargs="+", type=Path)
    r.add_argument("--baseline", help="tag of the baseline row (default: first row)")
    r.add_argument("--format", choices=["csv", "md"], default="md")
    r.add_argument("-o", "--output", type=Path)

    gr = sub.add_parser("graph", help="write a mini-resnet in the graph text format")
    gr.add_argument("--layout", choices=["nchw", "nhwc"], default="nchw")
    gr.add_argument("--batch", type=_positive, default=1)
    gr.add_argument("--seed", type=int, default=0)
    gr.add_argument("-o", "--output", type=Path)
    return parser


def _emit(text: str, output: Optional[Path]) -> None:
    if output is None:
        sys.stdout.write(text)
    else:
        output.write_text(text)


def cmd_bench(args) -> int:
    layout = NCHW if args.layout == "nchw" else NHWC
    g = graphmod.loads(args.graph.read_text()) if args.graph else None
    cfg = BenchConfig(
        epochs=args.epochs,
        warmup=args.warmup,
        batch=args.batch,
        layout=layout,
        schedule=resolve_schedule(args.layout, args.schedule, args.precision),
        precision=args.precision,
        executor=args.executor,
        seed=args.seed,
        graph=g,
        tag=args.tag,
    )
    result = run_benchmark(cfg)
    _emit(render_report([result], result.tag, args.format), args.output)
    return EXIT_OK


def cmd_verify(args) -> int:
    failures = consensus_suite(args.cases, args.seed)
    for line in failures:
        print(line)
    print(f"{args.cases} cases, {len(failures)} mismatches")
    return EXIT_VERIFY_FAILED if failures else EXIT_OK


def cmd_report(args) -> int:
    rows = []
    for path in args.files:
        rows.extend(rows_from_csv(path.read_text()))
    _emit(render_rows(summarize_rows(rows, args.baseline), args.format), args.output)
    return EXIT_OK


def cmd_graph(args) -> int:
    cfg = MiniResNetConfig(seed=args.seed)
    g = build_mini_resnet(cfg, NCHW if args.layout == "nchw" else NHWC, args.batch)
    _emit(graphmod.dumps(g), args.output)
    return EXIT_OK


COMMANDS = {"bench": cmd_bench, "verify": cmd_verify, "report": cmd_report, "graph": cmd_graph}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (UsageError, QConvLabError, OSError) as exc:
        print(f"qconvlab {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
