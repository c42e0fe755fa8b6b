"""Single-word Bridge FIFO latency at 0, 1, 3 and 6 hops, beside the measured hardware figures."""

from __future__ import annotations

from dataclasses import dataclass

from .system import SimParams, System
from .topology import Coord, SystemConfig, preset
from .workload import TrafficSpec, WorkloadRunner, WorkloadSpec

# Hardware single-card bridge FIFO latencies, microseconds.
REFERENCE_US = {0: 0.25, 1: 1.1, 3: 2.5, 6: 4.7}
BENCH_WIDTH = 32
BUSY_WARMUP_NS = 20_000


@dataclass(frozen=True)
class BenchRow:
    hops: int
    src: Coord
    dst: Coord
    measured_ns: int
    reference_us: float

    @property
    def measured_us(self) -> float:
        return self.measured_ns / 1000

    @property
    def deviation_pct(self) -> float:
        return 100.0 * (self.measured_us - self.reference_us) / self.reference_us


def pick_pair(system: System, hops: int, src: Coord = Coord(0, 0, 0)) -> Coord:
    """First node (in index order) exactly ``hops`` away from ``src`` by BFS."""
    dist = system.topo.bfs_distances(src)
    for node in system.topo.nodes():
        if dist[node] == hops:
            return node
    raise ValueError(f"no node {hops} hops from {src}")


def _busy_system(config: SystemConfig, params: SimParams, seed: int) -> System:
    spec = WorkloadSpec(config.dims, seed, duration_us=BUSY_WARMUP_NS / 1000 * 4,
                        traffic=[TrafficSpec("UniformRandom", rate=4e6, size=256)])
    runner = WorkloadRunner(spec, system=System(config, params, seed))
    runner.system.sim.run_until(BUSY_WARMUP_NS)
    return runner.system


def measure(config: SystemConfig, hops: int, params: SimParams | None = None,
            busy: bool = False, seed: int = 0) -> BenchRow:
    params = params or SimParams()
    system = _busy_system(config, params, seed) if busy else System(config, params, seed)
    src = Coord(0, 0, 0)
    dst = pick_pair(system, hops, src)
    ch = system.open_bridge_fifo(src, dst, channel=31, width=BENCH_WIDTH)
    t0 = system.now()
    ch.push(0x1234_5678)
    system.sim.run_while(lambda: len(ch) == 0)
    return BenchRow(hops, src, dst, ch.peek_arrival() - t0, REFERENCE_US[hops])


def bench_latency(preset_name: str = "card", busy: bool = False, params: SimParams | None = None,
                  seed: int = 0) -> list[BenchRow]:
    config = preset(preset_name)
    return [measure(config, h, params, busy, seed) for h in sorted(REFERENCE_US)]


def format_table(rows: list[BenchRow]) -> str:
    lines = [f"{'hops':>4}  {'pair':<17}  {'measured_us':>11}  {'table_us':>8}  {'dev_%':>6}"]
    for r in rows:
        pair = f"{r.src}->{r.dst}"
        lines.append(f"{r.hops:>4}  {pair:<17}  {r.measured_us:>11.3f}  {r.reference_us:>8.2f}  {r.deviation_pct:>+6.2f}")
    return "\n".join(lines)
