"""Per-node Packet Mux (transmit arbitration) and Packet Demux (receive dispatch)."""

from __future__ import annotations

from typing import Protocol as _Proto

from ..engine import Simulator
from ..errors import ChannelExhausted
from ..router import Network, Packet, Protocol
from ..topology import Coord

MAX_BRIDGE_CHANNELS = 32


class TxSource(_Proto):
    def has_pending(self) -> bool: ...

    def pull(self, now: int) -> Packet: ...


class RxHandler(_Proto):
    def receive(self, pkt: Packet, now: int) -> bool: ...


class PacketMux:
    """Round-robin over the node's transmit endpoints while the router has room."""

    def __init__(self, node: Coord, network: Network, sim: Simulator):
        self.node = node
        self.network = network
        self.sim = sim
        self.sources: list[TxSource] = []
        self.bridge_tx: dict[int, TxSource] = {}
        self._next = 0
        self._busy = False
        self.packets_sent = 0

    def add_source(self, source: TxSource) -> None:
        self.sources.append(source)

    def register_bridge_tx(self, channel: int, source: TxSource) -> None:
        if channel in self.bridge_tx:
            raise ChannelExhausted(f"bridge FIFO transmit channel {channel} already in use at {self.node}")
        if len(self.bridge_tx) >= MAX_BRIDGE_CHANNELS:
            raise ChannelExhausted(f"node {self.node} already has {MAX_BRIDGE_CHANNELS} bridge FIFO transmitters")
        self.bridge_tx[channel] = source
        self.add_source(source)

    def wake(self) -> None:
        if self._busy:
            return
        self._busy = True
        try:
            sources = self.sources
            n = len(sources)
            while n and self.network.can_inject(self.node):
                for k in range(n):
                    src = sources[(self._next + k) % n]
                    if src.has_pending():
                        self._next = (self._next + k + 1) % n
                        break
                else:
                    break
                self.network.inject(self.node, src.pull(self.sim.now()))
                self.packets_sent += 1
        finally:
            self._busy = False


class PacketDemux:
    """Routes delivered packets to endpoints by (protocol, channel)."""

    def __init__(self, node: Coord):
        self.node = node
        self.handlers: dict[int, RxHandler] = {}
        self.bridge_rx: dict[int, RxHandler] = {}
        self.dropped_unknown = 0
        self.dispatched: dict[int, int] = {}

    def register(self, protocol: int, handler: RxHandler) -> None:
        if protocol == Protocol.BRIDGE_FIFO:
            raise ValueError("bridge FIFO receivers register per channel with register_bridge_rx")
        self.handlers[int(protocol)] = handler

    def register_bridge_rx(self, channel: int, handler: RxHandler) -> None:
        if channel in self.bridge_rx:
            raise ChannelExhausted(f"bridge FIFO receive channel {channel} already in use at {self.node}")
        if len(self.bridge_rx) >= MAX_BRIDGE_CHANNELS:
            raise ChannelExhausted(f"node {self.node} already has {MAX_BRIDGE_CHANNELS} bridge FIFO receivers")
        self.bridge_rx[channel] = handler

    def lookup(self, protocol: int, channel: int) -> RxHandler | None:
        if protocol == Protocol.BRIDGE_FIFO:
            return self.bridge_rx.get(channel)
        return self.handlers.get(protocol)

    def dispatch(self, pkt: Packet, now: int) -> bool:
        handler = self.lookup(pkt.protocol, pkt.channel)
        if handler is None:
            # unknown protocol or unbound channel: consume and count
            self.dropped_unknown += 1
            return True
        accepted = handler.receive(pkt, now)
        if accepted:
            self.dispatched[pkt.protocol] = self.dispatched.get(pkt.protocol, 0) + 1
        return accepted
