"""Hand-built situations that exercise one behaviour in isolation."""

from __future__ import annotations

from dataclasses import dataclass, field

from .router import Packet, Protocol
from .system import System
from .topology import Coord, preset


@dataclass
class ReorderResult:
    deliveries: list[tuple[int, int, list]] = field(default_factory=list)  # (seq, time, path)
    popped: list[int] = field(default_factory=list)
    pushed: list[int] = field(default_factory=list)
    max_reorder: int = 0

    @property
    def arrival_order(self) -> list[int]:
        return [seq for seq, _, _ in sorted(self.deliveries, key=lambda d: d[1])]

    @property
    def reordered(self) -> bool:
        return self.arrival_order != sorted(self.arrival_order)


def reordering_scenario(seed: int = 0) -> ReorderResult:
    """Two Bridge FIFO packets from (0,0,0) to (1,1,0) that arrive out of order.

    Packet 0 (a full 64-word payload) leaves on +X, the first minimal port.
    Packet 1 (one word) is pushed 10 ns later, finds +X still serializing and
    leaves on +Y instead.  Meanwhile (1,0,0) is flooding its own +Y link with
    Postmaster traffic bound for (1,2,0), so packet 0 queues there behind it
    while packet 1 has a clear path through (0,1,0).  The receive side must
    still hand the words back in push order.
    """
    system = System(preset("card"), seed=seed)
    src, dst, hog = Coord(0, 0, 0), Coord(1, 1, 0), Coord(1, 0, 0)
    result = ReorderResult()

    def on_delivery(node: Coord, pkt: Packet, now: int) -> None:
        if pkt.protocol == Protocol.BRIDGE_FIFO and node == dst:
            result.deliveries.append((pkt.seq, now, [tuple(c) for c in pkt.path]))

    system.network.delivery_hooks.append(on_delivery)
    initiator = system.nodes[hog].initiator
    for i in range(8):
        initiator.send(Coord(1, 2, 0), bytes([i]) * 2048)

    ch = system.open_bridge_fifo(src, dst, channel=0, width=32)
    first = list(range(ch.words_per_packet))
    for w in first:
        ch.push(w)
    result.pushed.extend(first)

    def late_push() -> None:
        ch.push(0xBEEF)
        result.pushed.append(0xBEEF)

    system.sim.schedule(10, late_push)
    system.sim.run_until(None)
    while (w := ch.pop()) is not None:
        result.popped.append(w)
    result.max_reorder = ch.stats.max_reorder
    return result
