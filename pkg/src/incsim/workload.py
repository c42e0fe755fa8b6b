"""Workload files (JSON, schema 1) and the driver that runs them.

Example::

    {
      "schema": 1,
      "preset": "card",
      "seed": 7,
      "duration_us": 50,
      "traffic": [
        {"pattern": "UniformRandom", "rate": 200000, "size": 64},
        {"pattern": "BridgeFifoPairs", "pairs": 4, "rate": 1000000, "width": 32}
      ]
    }

Each (traffic entry, node) pair gets its own random stream derived from the
seed, so adding a node or entry never perturbs the others.
"""

from __future__ import annotations

import hashlib
import json
import random
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from .errors import WorkloadError
from .sideband import BroadcastWrite
from .stats import build_report
from .system import SimParams, System
from .topology import PRESETS, Coord, SystemConfig

SCHEMA = 1
PATTERNS = ("UniformRandom", "NearestNeighbor", "BroadcastStorm", "PostmasterScatter",
            "BridgeFifoPairs", "EthernetMesh")
RETRY_NS = 200
BROADCAST_ADDR = 0x0080_0000


@dataclass
class TrafficSpec:
    pattern: str
    rate: float | None = None
    count: int | None = None
    size: int = 64
    params: dict = field(default_factory=dict)


@dataclass
class WorkloadSpec:
    dims: Coord
    seed: int = 0
    duration_us: float = 100.0
    traffic: list[TrafficSpec] = field(default_factory=list)
    drain: bool = True
    config: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)

    @property
    def duration_ns(self) -> int:
        return int(round(self.duration_us * 1000))


def _fail(msg: str, where: str = "") -> None:
    raise WorkloadError(f"{where}: {msg}" if where else msg)


def parse_workload(raw: dict, source: str = "<workload>") -> WorkloadSpec:
    if not isinstance(raw, dict):
        _fail("top level must be a JSON object", source)
    if raw.get("schema") != SCHEMA:
        _fail(f"expected \"schema\": {SCHEMA}, got {raw.get('schema')!r}", source)
    allowed = {"schema", "preset", "dims", "seed", "duration_us", "traffic", "drain", "config", "params"}
    extra = set(raw) - allowed
    if extra:
        _fail(f"unknown keys {sorted(extra)}", source)
    if ("preset" in raw) == ("dims" in raw):
        _fail("give exactly one of \"preset\" or \"dims\"", source)
    if "preset" in raw:
        name = str(raw["preset"]).lower()
        if name not in PRESETS:
            _fail(f"unknown preset {raw['preset']!r}; choose from {sorted(PRESETS)}", source)
        dims = PRESETS[name]
    else:
        dims = raw["dims"]
        if not (isinstance(dims, list) and len(dims) == 3 and all(isinstance(v, int) for v in dims)):
            _fail("\"dims\" must be a list of three integers", source)
        dims = Coord(*dims)
    duration = raw.get("duration_us", 100.0)
    if not isinstance(duration, (int, float)) or duration <= 0:
        _fail("\"duration_us\" must be a positive number", source)
    seed = raw.get("seed", 0)
    if not isinstance(seed, int):
        _fail("\"seed\" must be an integer", source)

    traffic = []
    entries = raw.get("traffic", [])
    if not isinstance(entries, list):
        _fail("\"traffic\" must be a list", source)
    for i, entry in enumerate(entries):
        where = f"{source}: traffic[{i}]"
        if not isinstance(entry, dict):
            _fail("each traffic entry must be an object", where)
        entry = dict(entry)
        pattern = entry.pop("pattern", None)
        if pattern not in PATTERNS:
            _fail(f"pattern must be one of {list(PATTERNS)}, got {pattern!r}", where)
        rate = entry.pop("rate", None)
        count = entry.pop("count", None)
        size = entry.pop("size", 64)
        if (rate is None) == (count is None):
            _fail("give exactly one of \"rate\" (msgs/s/node) or \"count\" (msgs/node)", where)
        if rate is not None and (not isinstance(rate, (int, float)) or rate <= 0):
            _fail("\"rate\" must be positive", where)
        if count is not None and (not isinstance(count, int) or count <= 0):
            _fail("\"count\" must be a positive integer", where)
        if not isinstance(size, int) or size <= 0:
            _fail("\"size\" must be a positive integer", where)
        traffic.append(TrafficSpec(pattern, rate, count, size, entry))
    return WorkloadSpec(dims, seed, float(duration), traffic, bool(raw.get("drain", True)),
                        dict(raw.get("config", {})), dict(raw.get("params", {})))


def load_workload(path: str | Path) -> WorkloadSpec:
    text = Path(path).read_text(encoding="utf-8")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise WorkloadError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    return parse_workload(raw, str(path))


# ---------------------------------------------------------------------- driver


class WorkloadRunner:
    def __init__(self, spec: WorkloadSpec, trace: Callable[[str], None] | None = None,
                 system: System | None = None):
        self.spec = spec
        if system is None:
            try:
                config = SystemConfig(dims=spec.dims, **spec.config)
                params = SimParams.from_dict(spec.params)
            except TypeError as exc:
                raise WorkloadError(str(exc)) from None
            system = System(config, params, spec.seed)
        self.system = system
        self.system.network.trace_sink = trace
        self.horizon = spec.duration_ns
        self.generated = 0
        self.backpressure = 0
        self.eth_sent: Counter = Counter()
        self.eth_received: Counter = Counter()
        self.bf_expected: dict[int, int] = {}
        self._fifos: list = []
        self.broadcasts = []
        self._pollers: list = []
        self._nodes = list(self.system.topo.nodes())
        for i, traffic in enumerate(spec.traffic):
            self._setup(i, traffic)

    # ------------------------------------------------------------ scheduling

    def _rng(self, *key) -> random.Random:
        return random.Random("/".join(str(k) for k in (self.spec.seed, *key)))

    def _times(self, rng: random.Random, traffic: TrafficSpec):
        if traffic.count is not None:
            yield from sorted(rng.randrange(self.horizon) for _ in range(traffic.count))
            return
        mean = 1e9 / traffic.rate
        t = 0.0
        while True:
            t += rng.expovariate(1.0 / mean)
            if t >= self.horizon:
                return
            yield int(t)

    def _drive(self, rng: random.Random, traffic: TrafficSpec, make: Callable[[random.Random], Callable[[], bool]]):
        times = self._times(rng, traffic)
        sim = self.system.sim

        def fire():
            self.generated += 1
            attempt(make(rng))
            nxt = next(times, None)
            if nxt is not None:
                sim.schedule(max(nxt, sim.now()), fire)

        def attempt(send):
            if not send():
                self.backpressure += 1
                sim.after(RETRY_NS, attempt, send)

        first = next(times, None)
        if first is not None:
            sim.schedule(first, fire)

    # -------------------------------------------------------------- patterns

    def _setup(self, i: int, traffic: TrafficSpec) -> None:
        system = self.system
        topo = system.topo
        nodes = self._nodes
        p = traffic.params
        pattern = traffic.pattern

        if pattern in ("UniformRandom", "NearestNeighbor", "PostmasterScatter"):
            if len(nodes) < 2:
                raise WorkloadError(f"{pattern} needs at least two nodes")
            size = min(traffic.size, system.params.pm_max_packet)
            for idx, node in enumerate(nodes):
                rng = self._rng(i, idx)
                if pattern == "UniformRandom":
                    choices = None
                elif pattern == "NearestNeighbor":
                    choices = [topo.links[(node, q)].dst for q in topo.out_ports[node] if q < 6]
                else:
                    fanout = min(int(p.get("targets", 4)), len(nodes) - 1)
                    others = [n for n in nodes if n != node]
                    choices = rng.sample(others, fanout)
                self._drive(rng, traffic, self._postmaster_maker(node, choices, size))
        elif pattern == "BroadcastStorm":
            for idx, node in enumerate(nodes):
                self._drive(self._rng(i, idx), traffic, self._broadcast_maker(node))
        elif pattern == "BridgeFifoPairs":
            width = int(p.get("width", 32))
            pairs = int(p.get("pairs", 1))
            rng = self._rng(i, "pairs")
            used_tx: Counter = Counter()
            used_rx: Counter = Counter()
            for k in range(pairs):
                src, dst = rng.choice(nodes), rng.choice(nodes)
                channel = max(used_tx[src], used_rx[dst])
                if channel >= 32:
                    raise WorkloadError("BridgeFifoPairs ran out of channels on a node")
                used_tx[src] = used_rx[dst] = channel + 1
                ch = system.open_bridge_fifo(src, dst, channel, width)
                self.bf_expected[id(ch)] = 0
                self._fifos.append(ch)
                self._drive(self._rng(i, "pair", k), traffic, self._fifo_maker(ch))
        elif pattern == "EthernetMesh":
            mode = p.get("mode", system.params.eth_mode)
            mtu = system.params.eth_mtu
            for idx, node in enumerate(nodes):
                eth = system.nodes[node].eth
                eth.mode = type(eth.mode)(mode)
                eth.on_frame = self._eth_sink(node)
                self._drive(self._rng(i, idx), traffic, self._eth_maker(node, min(traffic.size, mtu)))
            if mode == "polling":
                interval = int(float(p.get("poll_interval_us", 5.0)) * 1000)
                self._pollers.append(interval)
                system.sim.schedule(interval, self._poll, interval)

    def _postmaster_maker(self, node: Coord, choices, size: int):
        nodes = self._nodes
        initiator = self.system.nodes[node].initiator

        def make(rng):
            if choices is None:
                dst = node
                while dst == node:
                    dst = rng.choice(nodes)
            else:
                dst = rng.choice(choices)
            data = rng.randbytes(size)
            return lambda: initiator.send(dst, data)

        return make

    def _broadcast_maker(self, node: Coord):
        tunnel = self.system.tunnel

        def make(rng):
            word = rng.getrandbits(32)

            def send():
                self.broadcasts.append(tunnel.access(node, BroadcastWrite(BROADCAST_ADDR, word)))
                return True

            return send

        return make

    def _fifo_maker(self, ch):
        state = {"next": 0}
        mask = (1 << ch.width) - 1

        def make(rng):
            def send():
                if ch.push(state["next"] & mask):
                    state["next"] += 1
                    return True
                return False

            return send

        return make

    def _eth_maker(self, node: Coord, max_size: int):
        nodes = self._nodes
        eth = self.system.nodes[node].eth

        def make(rng):
            dst = rng.choice(nodes)
            frame = rng.randbytes(rng.randint(1, max_size))
            self.eth_sent[(node, dst, hashlib.sha1(frame).digest())] += 1
            return lambda: eth.send(dst, frame)

        return make

    def _eth_sink(self, node: Coord):
        def on_frame(src, frame, now):
            self.eth_received[(src, node, hashlib.sha1(frame).digest())] += 1
        return on_frame

    def _poll(self, interval: int) -> None:
        self._poll_all()
        if self.system.sim.now() + interval <= self.horizon:
            self.system.sim.after(interval, self._poll, interval)

    def _poll_all(self) -> int:
        got = 0
        for node, stack in self.system.nodes.items():
            eth = stack.eth
            if eth.mode.value == "polling":
                for src, frame in eth.poll():
                    self.eth_received[(src, node, hashlib.sha1(frame).digest())] += 1
                    got += 1
        return got

    # ------------------------------------------------------------------- run

    def run(self) -> dict:
        sim = self.system.sim
        sim.run_until(self.horizon)
        if self.spec.drain:
            while True:
                sim.run_until(None)
                if not self._poll_all() and not sim.pending:
                    break
        return self.report()

    def _check_fifos(self) -> int:
        # only channels this runner opened; their words count up from zero
        violations = 0
        for ch in self._fifos:
            mask = (1 << ch.width) - 1
            expect = self.bf_expected[id(ch)]
            while (word := ch.pop()) is not None:
                if word != expect & mask:
                    violations += 1
                expect += 1
            self.bf_expected[id(ch)] = expect
        return violations

    def _check_postmaster(self) -> int:
        bad = 0
        for stack in self.system.nodes.values():
            last_seq: dict = {}
            for rec in stack.target.log:
                if last_seq.get(rec.initiator, -1) >= rec.seq:
                    bad += 1
                last_seq[rec.initiator] = rec.seq
        return bad

    def report(self) -> dict:
        broadcasts_done = sum(1 for r in self.broadcasts if r.done)
        workload = {
            "generated": self.generated,
            "backpressure_retries": self.backpressure,
            "broadcasts": len(self.broadcasts),
            "broadcasts_complete": broadcasts_done,
            "bridge_fifo_order_violations": self._check_fifos(),
            "postmaster_order_violations": self._check_postmaster(),
            "ethernet_frames_mismatched": sum((self.eth_sent - self.eth_received).values())
            + sum((self.eth_received - self.eth_sent).values()),
        }
        return build_report(self.system, workload)


def run_workload(spec: WorkloadSpec | dict, trace_path: str | Path | None = None) -> dict:
    if isinstance(spec, dict):
        spec = parse_workload(spec)
    if trace_path is None:
        return WorkloadRunner(spec).run()
    with open(trace_path, "w", encoding="utf-8") as fh:
        runner = WorkloadRunner(spec, lambda line: fh.write(line + "\n"))
        return runner.run()
