"""Command line entry point: ``incsim topo | run | bench-latency | sandbox``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import __version__
from .bench import bench_latency, format_table
from .errors import IncSimError, OddExtent
from .sandbox import Sandbox
from .stats import dumps
from .system import System
from .topology import PRESETS, Axis, Coord, SystemConfig, build_topology, preset
from .workload import load_workload, run_workload

GB = 10**9

# Vendor-quoted bisection for the 12x12x12 build; link enumeration disagrees.
INC9000_VENDOR_BISECTION_GBPS = 864


def _config(name: str) -> SystemConfig:
    """A preset name or explicit dimensions such as ``6,6,3``."""
    if name.lower() in PRESETS:
        return preset(name)
    try:
        dims = Coord(*(int(v) for v in name.split(",")))
    except (TypeError, ValueError):
        raise IncSimError(f"unknown preset {name!r}; choose from {sorted(PRESETS)} or give x,y,z") from None
    return SystemConfig(dims=dims)


def _axis(text: str) -> Axis:
    try:
        return Axis[text.upper()]
    except KeyError:
        raise IncSimError(f"axis must be one of x, y, z; got {text!r}") from None


def cmd_topo(args) -> int:
    config = _config(args.preset)
    topo = build_topology(config)
    axes = [_axis(args.bisection)] if args.bisection else list(Axis)
    if args.bisection:
        topo.bisection_bandwidth(axes[0])  # fail before printing anything
    census = topo.link_census()
    print(f"dims        {'x'.join(map(str, config.dims))}")
    for key, value in census.items():
        print(f"{key:<18}{value}")
    for axis in axes:
        try:
            bw = topo.bisection_bandwidth(axis)
            print(f"bisection {axis.name}       {bw // GB} GB/s")
        except OddExtent as exc:
            print(f"bisection {axis.name}       n/a ({exc})")
    if config.dims == PRESETS["inc9000"]:
        measured = topo.bisection_bandwidth(Axis.X) // GB
        print(f"note: the vendor figure for this build is {INC9000_VENDOR_BISECTION_GBPS} GB/s; "
              f"enumerating links gives {measured} GB/s")
    if args.offcard:
        off = topo.offcard_link_count(Coord.parse(args.offcard))
        kind = "boundary" if off.boundary else "interior"
        print(f"offcard {args.offcard}  {off.count} links  {off.bandwidth // GB} GB/s  ({kind} card)")
    if args.export:
        topo.export(args.export)
        print(f"wrote {args.export}")
    return 0


def cmd_run(args) -> int:
    spec = load_workload(args.workload)
    report = run_workload(spec, args.trace)
    text = dumps(report)
    if args.stats:
        Path(args.stats).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def cmd_bench(args) -> int:
    rows = bench_latency(args.preset, busy=args.busy)
    print(format_table(rows))
    return 0


def cmd_sandbox(args) -> int:
    box = Sandbox(System(_config(args.preset)))
    if args.script:
        with open(args.script, encoding="utf-8") as fh:
            errors = box.repl(fh, sys.stdout, prompt=False)
    else:
        errors = box.repl(sys.stdin, sys.stdout, prompt=sys.stdin.isatty())
    return 1 if errors else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="incsim", description="Discrete-event model of a 3D-mesh FPGA cluster.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("topo", help="node and link census, bisection and off-card bandwidth")
    p.add_argument("preset", help=f"one of {sorted(PRESETS)} or x,y,z")
    p.add_argument("--bisection", metavar="AXIS", help="only report this axis (x, y or z)")
    p.add_argument("--offcard", metavar="X,Y,Z", help="count links leaving the card with this origin")
    p.add_argument("--export", metavar="PATH", help="write nodes and links as JSON")
    p.set_defaults(func=cmd_topo)

    p = sub.add_parser("run", help="run a workload file and print stats JSON")
    p.add_argument("workload")
    p.add_argument("--trace", metavar="PATH", help="write one JSON line per delivered packet")
    p.add_argument("--stats", metavar="PATH", help="write stats here instead of stdout")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("bench-latency", help="single-word bridge FIFO latency at 0, 1, 3 and 6 hops")
    p.add_argument("preset", nargs="?", default="card")
    p.add_argument("--busy", action="store_true", help="measure under background traffic")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("sandbox", help="interactive sideband console")
    p.add_argument("preset", nargs="?", default="card")
    p.add_argument("--script", metavar="FILE", help="read commands from a file")
    p.set_defaults(func=cmd_sandbox)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (IncSimError, OSError, ValueError) as exc:
        print(f"incsim: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
