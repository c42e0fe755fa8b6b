"""Packet format, directed and broadcast routing, and the per-node routers.

Directed packets take a minimal path.  At each node the candidate set holds
every outgoing link (single- or multi-span) that brings the packet one hop
closer; the first idle one in port order wins.  When none can take the
packet it waits at the node and is re-examined whenever one of the node's
links frees up or gets credit back.

Broadcast packets use single-span links only.  They spread in dimension order
(X, then Y, then Z), so each node receives exactly one copy.

Every physical link has two credit lanes.  Adaptive traffic uses the first.
The second is an escape lane for packets that can go nowhere adaptively.  On
it a packet follows the dimension-ordered minimal hop, so escape lanes can
never form a waiting cycle.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Any, Callable, Iterable

from .engine import LatencyModel, Simulator
from .errors import InternalInvariantViolation, InvalidHeader, PayloadTooLarge, Unroutable
from .fabric import Blocked, CreditedLink, FabricLink, Wire
from .topology import PORTS, Axis, Coord, Span, Topology, axis_hops, port_for


class Protocol(IntEnum):
    ETHERNET = 1
    POSTMASTER = 2
    BRIDGE_FIFO = 3
    NET_TUNNEL = 4


HEADER_BYTES = 16
_HEADER = struct.Struct(">BBB3B3BIBH")
_FLAG_BROADCAST = 0x01
_FLAG_LAST = 0x02
_BROADCAST_ADDR = (0xFF, 0xFF, 0xFF)


@dataclass(slots=True, eq=False)
class Packet:
    protocol: int
    src: Coord
    dst: Coord | None  # None means broadcast
    channel: int = 0
    seq: int = 0
    payload: bytes = b""
    frag: int = 0
    last: bool = True
    # simulation bookkeeping, not on the wire
    t_inject: int = 0
    hops: int = 0
    path: list = field(default_factory=list)
    meta: Any = None

    @property
    def broadcast(self) -> bool:
        return self.dst is None

    @property
    def wire_bytes(self) -> int:
        return HEADER_BYTES + len(self.payload)

    def fork(self) -> "Packet":
        return Packet(self.protocol, self.src, self.dst, self.channel, self.seq, self.payload,
                      self.frag, self.last, self.t_inject, self.hops, list(self.path), self.meta)

    def encode_header(self) -> bytes:
        return encode_header(self)


def encode_header(pkt: Packet) -> bytes:
    """16-byte big-endian header: protocol, flags, channel, src xyz, dst xyz, seq, frag, length."""
    if not 0 <= pkt.channel < 32:
        raise InvalidHeader(f"channel {pkt.channel} outside 0..31")
    flags = (_FLAG_BROADCAST if pkt.dst is None else 0) | (_FLAG_LAST if pkt.last else 0)
    dst = _BROADCAST_ADDR if pkt.dst is None else tuple(pkt.dst)
    return _HEADER.pack(int(pkt.protocol), flags, pkt.channel, *pkt.src, *dst,
                        pkt.seq & 0xFFFFFFFF, pkt.frag, len(pkt.payload))


def decode_header(raw: bytes) -> Packet:
    """Inverse of :func:`encode_header`; the payload is left empty."""
    protocol, flags, channel, sx, sy, sz, dx, dy, dz, seq, frag, length = _HEADER.unpack(raw[:HEADER_BYTES])
    dst = None if flags & _FLAG_BROADCAST else Coord(dx, dy, dz)
    pkt = Packet(protocol, Coord(sx, sy, sz), dst, channel, seq, b"", frag, bool(flags & _FLAG_LAST))
    pkt.meta = {"payload_len": length}
    return pkt


def validate_header(pkt: Packet, payload_max: int) -> None:
    if len(pkt.payload) > payload_max:
        raise PayloadTooLarge(f"payload of {len(pkt.payload)} bytes exceeds {payload_max}")
    if pkt.dst is None and pkt.protocol == Protocol.POSTMASTER:
        raise InvalidHeader("postmaster packets are directed-only")
    if not 0 <= pkt.channel < 32:
        raise InvalidHeader(f"channel {pkt.channel} outside 0..31")


# --------------------------------------------------------------------- routing


class Reason(Enum):
    IDLE = "Idle"
    ALL_BUSY_QUEUED = "AllBusyQueued"


@dataclass(frozen=True)
class RoutingDecision:
    chosen: int | None
    candidates: tuple[int, ...]
    reason: Reason


def productive_ports(topo: Topology, node: Coord, dst: Coord) -> tuple[int, ...]:
    """Outgoing ports that cut the remaining hop count by exactly one, in tie-break order."""
    out = []
    for p in topo.out_ports[node]:
        port = PORTS[p]
        d = dst[port.axis] - node[port.axis]
        if d and axis_hops(d - port.step) == axis_hops(d) - 1:
            out.append(p)
    return tuple(out)


def escape_port(topo: Topology, node: Coord, dst: Coord) -> int:
    """Dimension-ordered minimal hop: lowest unresolved axis, multi-span while 3+ away."""
    for axis in Axis:
        d = dst[axis] - node[axis]
        if d:
            span = Span.MULTI if abs(d) >= 3 else Span.SINGLE
            return port_for(axis, 1 if d > 0 else -1, span)
    raise Unroutable(f"packet for {dst} is already at {node}")


def route_directed(
    topo: Topology,
    node: Coord,
    dst: Coord,
    available: Callable[[int], bool] = lambda port: True,
) -> RoutingDecision:
    if dst == node:
        raise Unroutable(f"packet for {dst} is already at its destination")
    candidates = productive_ports(topo, node, dst)
    if not candidates:
        raise Unroutable(f"no productive link from {node} towards {dst}")
    for p in candidates:
        if available(p):
            return RoutingDecision(p, candidates, Reason.IDLE)
    return RoutingDecision(None, candidates, Reason.ALL_BUSY_QUEUED)


def broadcast_forward_set(topo: Topology, node: Coord, arrival: tuple[Axis, int] | None) -> tuple[int, ...]:
    """Single-span ports a broadcast copy leaves ``node`` on.

    ``arrival`` is ``None`` at the source, else the (axis, direction of
    travel) of the link the copy came in on.  Keep going straight, and fan out
    both ways along every later axis.
    """
    if arrival is None:
        wanted = [(a, d) for a in Axis for d in (1, -1)]
    else:
        axis, direction = Axis(arrival[0]), arrival[1]
        wanted = [(axis, direction)] + [(a, d) for a in Axis if a > axis for d in (1, -1)]
    present = topo.out_ports[node]
    ports = []
    for axis, direction in wanted:
        p = port_for(axis, direction, Span.SINGLE)
        if p in present:
            ports.append(p)
    return tuple(sorted(ports))


# --------------------------------------------------------------------- network


class _Transit:
    __slots__ = ("packet", "lane", "ports", "local", "candidates", "escape")

    def __init__(self, packet: Packet, lane: CreditedLink | None, ports: list[int] | None,
                 local: bool, candidates: tuple[int, ...] = (), escape: int = -1):
        self.packet = packet
        self.lane = lane
        self.ports = ports
        self.local = local
        self.candidates = candidates
        self.escape = escape


@dataclass
class ProtocolStats:
    injected: int = 0
    delivered: int = 0
    latencies: list = field(default_factory=list)


class Network:
    """All routers and links of one system, driven by a :class:`Simulator`."""

    def __init__(
        self,
        topo: Topology,
        sim: Simulator,
        latency: LatencyModel | None = None,
        *,
        escape_bytes: int = 1024,
        credit_threshold: int = 256,
        injection_capacity: int = 16,
        check_invariants: bool = False,
    ):
        self.topo = topo
        self.sim = sim
        self.latency = latency or LatencyModel()
        self.payload_max = topo.config.payload_max_bytes
        self.injection_capacity = injection_capacity
        rx = topo.config.rx_buffer_bytes
        if not 0 < escape_bytes < rx:
            raise ValueError("escape lane must take a proper slice of the receive buffer")
        if escape_bytes < HEADER_BYTES + self.payload_max or rx - escape_bytes < HEADER_BYTES + self.payload_max:
            raise ValueError("each credit lane must hold at least one maximum-size packet")

        hop = self.latency.link_latency_ns
        self.links: dict[tuple[Coord, int], FabricLink] = {}
        self.out: dict[Coord, list[FabricLink | None]] = {}
        for node in topo.nodes():
            row: list[FabricLink | None] = [None] * len(PORTS)
            for p in topo.out_ports[node]:
                spec = topo.links[(node, p)]
                wire = Wire(spec.bandwidth)
                lanes = [
                    CreditedLink(spec, sim, cap, hop, credit_threshold, wire, self._on_credit, check_invariants)
                    for cap in (rx - escape_bytes, escape_bytes)
                ]
                link = FabricLink(spec, wire, *lanes)
                self.links[(node, p)] = link
                row[p] = link
            self.out[node] = row

        self.pending: dict[Coord, list[_Transit]] = {n: [] for n in topo.nodes()}
        self.injected_waiting: dict[Coord, int] = dict.fromkeys(topo.nodes(), 0)
        self.blocked_deliveries: dict[Coord, list[tuple[Packet, CreditedLink | None]]] = {}
        self.dispatchers: dict[Coord, Callable[[Packet, int], bool]] = {}
        self.inject_ready: dict[Coord, Callable[[], None]] = {}
        self.delivery_hooks: list[Callable[[Coord, Packet, int], None]] = []
        self.trace_sink: Callable[[str], None] | None = None

        self.protocol_stats: dict[int, ProtocolStats] = {}
        self.max_pending: dict[Coord, int] = dict.fromkeys(topo.nodes(), 0)
        self.injection_backpressure = 0

    # ---------------------------------------------------------------- wiring

    def attach(self, node: Coord, dispatch: Callable[[Packet, int], bool],
               inject_ready: Callable[[], None] | None = None) -> None:
        self.dispatchers[node] = dispatch
        if inject_ready is not None:
            self.inject_ready[node] = inject_ready

    def _stats(self, protocol: int) -> ProtocolStats:
        st = self.protocol_stats.get(protocol)
        if st is None:
            st = self.protocol_stats[protocol] = ProtocolStats()
        return st

    # ------------------------------------------------------------- injection

    def can_inject(self, node: Coord) -> bool:
        return self.injected_waiting[node] < self.injection_capacity

    def inject(self, node: Coord, pkt: Packet) -> bool:
        """Hand a packet to ``node``'s router.  False means the injection queue is full."""
        validate_header(pkt, self.payload_max)
        if pkt.src != node:
            raise InvalidHeader(f"packet from {pkt.src} injected at {node}")
        if pkt.dst is not None:
            self.topo.check(pkt.dst)
        if self.injected_waiting[node] >= self.injection_capacity:
            self.injection_backpressure += 1
            return False
        now = self.sim.now()
        pkt.t_inject = now
        pkt.hops = 0
        pkt.path = [node]
        self._stats(pkt.protocol).injected += 1
        lat = self.latency
        if pkt.dst is None:
            self.sim.schedule(now + lat.endpoint_overhead_ns, self._deliver, node, pkt.fork(), None)
            ports = broadcast_forward_set(self.topo, node, None)
            if ports:
                self.injected_waiting[node] += 1
                self.sim.schedule(now + lat.injection_ns, self._enter, node,
                                  _Transit(pkt, None, list(ports), True))
        elif pkt.dst == node:
            self.sim.schedule(now + lat.endpoint_overhead_ns, self._deliver, node, pkt, None)
        else:
            self.injected_waiting[node] += 1
            self.sim.schedule(now + lat.injection_ns, self._enter, node, self._directed(node, pkt, None, True))
        return True

    def _directed(self, node: Coord, pkt: Packet, lane: CreditedLink | None, local: bool) -> _Transit:
        cands = productive_ports(self.topo, node, pkt.dst)
        if not cands:
            raise Unroutable(f"no productive link from {node} towards {pkt.dst}")
        return _Transit(pkt, lane, None, local, cands, escape_port(self.topo, node, pkt.dst))

    def _enter(self, node: Coord, transit: _Transit) -> None:
        queue = self.pending[node]
        queue.append(transit)
        if len(queue) > self.max_pending[node]:
            self.max_pending[node] = len(queue)
        self._kick(node)

    # ------------------------------------------------------------- switching

    def _on_credit(self, lane: CreditedLink) -> None:
        self._kick(lane.spec.src)

    def _kick(self, node: Coord) -> None:
        queue = self.pending[node]
        if not queue:
            return
        now = self.sim.now()
        out = self.out[node]
        idle = {p for p in self.topo.out_ports[node] if out[p].wire.busy_until <= now}
        if not idle:
            return
        keep = []
        local_departed = False
        for i, t in enumerate(queue):
            if not idle:
                keep.extend(queue[i:])
                break
            if t.ports is None:
                done = self._send_directed(node, t, idle, out)
            else:
                done = self._send_broadcast(node, t, idle, out)
            if done:
                if t.lane is not None:
                    t.lane.free_and_credit(t.packet.wire_bytes)
                if t.local:
                    self.injected_waiting[node] -= 1
                    local_departed = True
            else:
                keep.append(t)
        self.pending[node] = keep
        if local_departed:
            ready = self.inject_ready.get(node)
            if ready is not None:
                ready()

    def _send_directed(self, node: Coord, t: _Transit, idle: set, out) -> bool:
        pkt = t.packet
        nbytes = pkt.wire_bytes
        for p in t.candidates:
            if p in idle:
                lane = out[p].adaptive
                if self._transmit(node, p, lane, pkt, nbytes, idle):
                    return True
        p = t.escape
        if p in idle:
            return self._transmit(node, p, out[p].escape, pkt, nbytes, idle)
        return False

    def _send_broadcast(self, node: Coord, t: _Transit, idle: set, out) -> bool:
        nbytes = t.packet.wire_bytes
        remaining = []
        for p in t.ports:
            sent = False
            if p in idle:
                link = out[p]
                lane = link.adaptive if link.adaptive.tx_credits >= nbytes else link.escape
                sent = self._transmit(node, p, lane, t.packet.fork(), nbytes, idle)
            if not sent:
                remaining.append(p)
        t.ports = remaining
        return not remaining

    def _transmit(self, node: Coord, port: int, lane: CreditedLink, pkt: Packet, nbytes: int, idle: set) -> bool:
        result = lane.try_transmit(nbytes, self._arrive, lane, pkt, serial_bytes=len(pkt.payload))
        if isinstance(result, Blocked):
            return False
        idle.discard(port)
        self.sim.schedule(lane.wire.busy_until, self._kick, node)
        return True

    def _arrive(self, lane: CreditedLink, pkt: Packet) -> None:
        spec = lane.spec
        node = spec.dst
        pkt.hops += 1
        pkt.path.append(node)
        if pkt.dst is None:
            if spec.span is not Span.SINGLE:
                raise InternalInvariantViolation("broadcast packet crossed a multi-span link")
            self.sim.after(self.latency.endpoint_overhead_ns, self._deliver, node, pkt.fork(), None)
            ports = broadcast_forward_set(self.topo, node, (spec.axis, spec.direction))
            if ports:
                self._enter(node, _Transit(pkt, lane, list(ports), False))
            else:
                lane.free_and_credit(pkt.wire_bytes)
        elif pkt.dst == node:
            self.sim.after(self.latency.endpoint_overhead_ns, self._deliver, node, pkt, lane)
        else:
            self._enter(node, self._directed(node, pkt, lane, False))

    # -------------------------------------------------------------- delivery

    def _deliver(self, node: Coord, pkt: Packet, lane: CreditedLink | None) -> None:
        if pkt.dst is not None and pkt.dst != node:
            raise InternalInvariantViolation(f"packet for {pkt.dst} delivered at {node}")
        dispatch = self.dispatchers.get(node)
        now = self.sim.now()
        if dispatch is not None and not dispatch(pkt, now):
            self.blocked_deliveries.setdefault(node, []).append((pkt, lane))
            return
        self._complete(node, pkt, lane, now)

    def _complete(self, node: Coord, pkt: Packet, lane: CreditedLink | None, now: int) -> None:
        if lane is not None:
            lane.free_and_credit(pkt.wire_bytes)
        st = self._stats(pkt.protocol)
        st.delivered += 1
        st.latencies.append(now - pkt.t_inject)
        for hook in self.delivery_hooks:
            hook(node, pkt, now)
        if self.trace_sink is not None:
            self.trace_sink(trace_record(node, pkt, now))

    def retry_deliveries(self, node: Coord) -> None:
        """Re-offer packets an endpoint refused earlier (it has made room)."""
        if self.blocked_deliveries.get(node):
            self.sim.after(0, self._retry, node)

    def _retry(self, node: Coord) -> None:
        blocked = self.blocked_deliveries.pop(node, [])
        dispatch = self.dispatchers[node]
        still = []
        for pkt, lane in blocked:
            now = self.sim.now()
            if dispatch(pkt, now):
                self._complete(node, pkt, lane, now)
            else:
                still.append((pkt, lane))
        if still:
            self.blocked_deliveries.setdefault(node, []).extend(still)

    # ----------------------------------------------------------------- status

    def lanes(self) -> Iterable[CreditedLink]:
        for link in self.links.values():
            yield link.adaptive
            yield link.escape

    def quiescent(self) -> bool:
        """True when no packet is queued, on a wire or sitting in a receive buffer."""
        if any(self.pending.values()) or any(self.blocked_deliveries.values()):
            return False
        return all(l.in_flight == 0 and l.rx_buffered == 0 for l in self.lanes())

    def conserved(self) -> bool:
        return all(l.conserved() for l in self.lanes())


def trace_record(node: Coord, pkt: Packet, t_deliver: int) -> str:
    record = {
        "t_inject": pkt.t_inject,
        "t_deliver": t_deliver,
        "src": list(pkt.src),
        "dst": list(node),
        "broadcast": pkt.dst is None,
        "protocol": Protocol(pkt.protocol).name if pkt.protocol in Protocol._value2member_map_ else pkt.protocol,
        "channel": pkt.channel,
        "seq": pkt.seq,
        "hops": pkt.hops,
        "path": [list(c) for c in pkt.path],
    }
    return json.dumps(record, separators=(",", ":"))
