"""Internal Ethernet: framed node-to-node interface with descriptor rings.

The driver puts a frame in a transmit descriptor and hands ownership to the
device.  The device DMAs it out as fabric fragments and returns the
descriptor.  The receiving device reassembles fragments and posts whole frames
to receive descriptors.  In interrupt mode each frame is handed to the driver
as it lands.  In polling mode frames sit in the ring until the driver polls
and takes them as a batch.  A full receive ring holds the completing fragment
back in the fabric.

Node coordinates stand in for MAC addresses.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from enum import Enum
from typing import Callable

from ..errors import FrameTooLarge, NotGateway, ZeroLength
from ..router import Network, Packet, Protocol
from ..topology import Coord, NodeRole, Topology

INTERNAL = 0
EGRESS = 1
RX_BUFFER_BASE = 0x2000_0000
RX_BUFFER_STRIDE = 0x800


class Mode(Enum):
    INTERRUPT = "interrupt"
    POLLING = "polling"


class Owner(Enum):
    DRIVER = "driver"
    DEVICE = "device"


@dataclass
class Descriptor:
    address: int
    length: int = 0
    owner: Owner = Owner.DRIVER
    frame: bytes = b""
    peer: Coord | None = None
    channel: int = INTERNAL


@dataclass
class EthStats:
    frames_sent: int = 0
    bytes_sent: int = 0
    frames_received: int = 0
    bytes_received: int = 0
    ring_full: int = 0
    delivery_events: int = 0
    rx_ring_stalls: int = 0


class EthInterface:
    def __init__(
        self,
        node: Coord,
        payload_max: int,
        mode: Mode | str = Mode.INTERRUPT,
        mtu: int = 1500,
        ring_size: int = 64,
        network: Network | None = None,
        on_frame: Callable[[Coord, bytes, int], None] | None = None,
        reassembly_timeout_ns: int = 1_000_000,
    ):
        self.node = Coord(*node)
        self.payload_max = payload_max
        self.mode = Mode(mode)
        self.mtu = mtu
        self.ring_size = ring_size
        self.network = network
        self.on_frame = on_frame
        self.egress_sink: Callable[[Coord, bytes, int], None] | None = None
        self.reassembly_timeout_ns = reassembly_timeout_ns
        self.mux = None

        self.tx_ring = [Descriptor(0) for _ in range(ring_size)]
        self._tx_head = 0  # next descriptor the device will drain
        self._tx_tail = 0  # next descriptor the driver will fill
        self._tx_owned = 0
        self._frag = 0
        self._frame_seq = 0

        self.rx_ring = [Descriptor(RX_BUFFER_BASE + i * RX_BUFFER_STRIDE) for i in range(ring_size)]
        self._rx_head = 0  # next descriptor the driver will read
        self._rx_tail = 0  # next descriptor the device will fill
        self._rx_posted = 0
        self._partial: dict[tuple[Coord, int], dict[int, bytes]] = {}
        self._started: dict[tuple[Coord, int], int] = {}
        self._totals: dict[tuple[Coord, int], int] = {}
        self.latencies: list[int] = []
        self.stats = EthStats()

    # -------------------------------------------------------------- transmit

    def send(self, dst: Coord, frame: bytes, channel: int = INTERNAL) -> bool:
        """Queue a frame in the transmit ring.  False when every descriptor is device-owned."""
        if not frame:
            raise ZeroLength("empty Ethernet frame")
        limit = self.mtu + (2 if channel == EGRESS else 0)
        if len(frame) > limit:
            raise FrameTooLarge(f"frame of {len(frame)} bytes exceeds MTU {self.mtu}")
        if self._tx_owned >= self.ring_size:
            self.stats.ring_full += 1
            return False
        desc = self.tx_ring[self._tx_tail]
        desc.frame = bytes(frame)
        desc.length = len(frame)
        desc.peer = Coord(*dst)
        desc.channel = channel
        desc.owner = Owner.DEVICE
        self._tx_tail = (self._tx_tail + 1) % self.ring_size
        self._tx_owned += 1
        if self.mux is not None:
            self.mux.wake()
        return True

    @property
    def tx_free(self) -> int:
        return self.ring_size - self._tx_owned

    def has_pending(self) -> bool:
        return self._tx_owned > 0

    def pull(self, now: int) -> Packet:
        desc = self.tx_ring[self._tx_head]
        step = self.payload_max
        nfrags = -(-desc.length // step)
        i = self._frag
        last = i == nfrags - 1
        pkt = Packet(Protocol.ETHERNET, self.node, desc.peer, desc.channel, self._frame_seq,
                     desc.frame[i * step:(i + 1) * step], i, last)
        if last:
            self._frag = 0
            self._frame_seq += 1
            self.stats.frames_sent += 1
            self.stats.bytes_sent += desc.length
            desc.owner = Owner.DRIVER
            desc.frame = b""
            self._tx_head = (self._tx_head + 1) % self.ring_size
            self._tx_owned -= 1
        else:
            self._frag = i + 1
        return pkt

    # --------------------------------------------------------------- receive

    def receive(self, pkt: Packet, now: int) -> bool:
        key = (pkt.src, pkt.seq)
        frags = self._partial.get(key, {})
        total = pkt.frag + 1 if pkt.last else self._totals.get(key)
        completes = total is not None and len(frags) + (pkt.frag not in frags) == total
        if completes and pkt.channel != EGRESS and self._rx_posted >= self.ring_size:
            self.stats.rx_ring_stalls += 1
            return False
        if key not in self._partial:
            self._partial[key] = frags
            self._started[key] = pkt.t_inject
        frags[pkt.frag] = pkt.payload
        if pkt.last:
            self._totals[key] = total
        if completes:
            frame = b"".join(frags[i] for i in range(total))
            del self._partial[key]
            self._totals.pop(key, None)
            self.latencies.append(now - self._started.pop(key))
            self._post(pkt.src, pkt.channel, frame, now)
        return True

    def _post(self, src: Coord, channel: int, frame: bytes, now: int) -> None:
        self.stats.frames_received += 1
        self.stats.bytes_received += len(frame)
        if channel == EGRESS:
            if self.egress_sink is None:
                raise NotGateway(f"egress frame arrived at non-gateway node {self.node}")
            self.egress_sink(src, frame, now)
            return
        desc = self.rx_ring[self._rx_tail]
        desc.frame = frame
        desc.length = len(frame)
        desc.peer = src
        desc.owner = Owner.DRIVER
        self._rx_tail = (self._rx_tail + 1) % self.ring_size
        self._rx_posted += 1
        if self.mode is Mode.INTERRUPT:
            self.stats.delivery_events += 1
            frames = self._drain_rx()
            if self.on_frame is not None:
                for peer, data in frames:
                    self.on_frame(peer, data, now)

    def _drain_rx(self) -> list[tuple[Coord, bytes]]:
        out = []
        while self._rx_posted:
            desc = self.rx_ring[self._rx_head]
            out.append((desc.peer, desc.frame))
            desc.frame = b""
            desc.owner = Owner.DEVICE
            self._rx_head = (self._rx_head + 1) % self.ring_size
            self._rx_posted -= 1
        return out

    def poll(self) -> list[tuple[Coord, bytes]]:
        """Take every frame posted since the last poll (polling mode)."""
        was_full = self._rx_posted >= self.ring_size
        frames = self._drain_rx()
        if frames:
            self.stats.delivery_events += 1
        if was_full and self.network is not None:
            self.network.retry_deliveries(self.node)
        return frames

    def reassembly_timeouts(self, now: int) -> int:
        return sum(1 for t in self._started.values() if now - t > self.reassembly_timeout_ns)


class Gateway:
    """Edge between the internal Ethernet and the outside world at a gateway node.

    External endpoints are small integers mapped statically to internal nodes.
    """

    def __init__(self, topo: Topology, node: Coord, iface: EthInterface,
                 nat: dict[int, Coord] | None = None):
        node = Coord(*node)
        if topo.role(node) is not NodeRole.ETHERNET_GATEWAY:
            raise NotGateway(f"node {node} has role {topo.role(node).value}")
        self.node = node
        self.iface = iface
        self.nat = dict(nat or {})
        self.capture: list[tuple[int, Coord, bytes, int]] = []
        iface.egress_sink = self._egress

    def ingress(self, dst: Coord | int, frame: bytes) -> bool:
        """Frame from the external port into the internal network."""
        if isinstance(dst, int):
            dst = self.nat[dst]
        return self.iface.send(Coord(*dst), frame)

    def _egress(self, src: Coord, data: bytes, now: int) -> None:
        port = int.from_bytes(data[:2], "big")
        self.capture.append((port, src, data[2:], now))


def send_external(iface: EthInterface, gateway: Coord, external_port: int, frame: bytes) -> bool:
    """Internal node sends a frame out through ``gateway`` to an external endpoint."""
    return iface.send(gateway, external_port.to_bytes(2, "big") + bytes(frame), channel=EGRESS)
