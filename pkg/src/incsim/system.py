"""One simulated machine: topology, fabric, per-node protocol stacks and sideband."""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

from .channels import (
    BridgeFifoChannel,
    EthInterface,
    Gateway,
    Mode,
    PacketDemux,
    PacketMux,
    PostmasterInitiator,
    PostmasterTarget,
)
from .channels.mux import MAX_BRIDGE_CHANNELS
from .engine import LatencyModel, Simulator
from .errors import ChannelExhausted, ConfigError, OffCardTarget
from .router import Network, Protocol
from .sideband import NetTunnel, NetTunnelEndpoint, NodeMemory, Op, Read, Request, RingBus, init_registers, wait
from .topology import Coord, NodeRole, SystemConfig, Topology, build_topology, card_of


@dataclass(frozen=True)
class SimParams:
    latency: LatencyModel = field(default_factory=LatencyModel)
    escape_buffer_bytes: int = 1024
    credit_threshold: int = 256
    injection_queue_packets: int = 16
    bf_staging_words: int = 1024
    bf_window_ns: int = 0
    pm_max_packet: int = 2048
    pm_queue_bytes: int = 16384
    pm_buffer_bytes: int = 16 * 1024 * 1024
    pm_record_headers: bool = True
    eth_mtu: int = 1500
    eth_ring: int = 64
    eth_mode: str = "interrupt"
    reassembly_timeout_ns: int = 1_000_000
    ring_hop_ns: int = 100
    check_invariants: bool = False

    @classmethod
    def from_dict(cls, raw: dict) -> "SimParams":
        raw = dict(raw)
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown simulation parameters: {sorted(unknown)}")
        if "latency" in raw:
            raw["latency"] = LatencyModel(**raw["latency"])
        return replace(cls(), **raw)


@dataclass
class NodeStack:
    node: Coord
    mux: PacketMux
    demux: PacketDemux
    initiator: PostmasterInitiator
    target: PostmasterTarget
    eth: EthInterface
    tunnel: NetTunnelEndpoint
    memory: NodeMemory


class System:
    def __init__(self, config: SystemConfig, params: SimParams | None = None, seed: int = 0):
        self.config = config
        self.params = params = params or SimParams()
        self.topo: Topology = build_topology(config)
        self.sim = Simulator(seed)
        self.network = Network(
            self.topo,
            self.sim,
            params.latency,
            escape_bytes=params.escape_buffer_bytes,
            credit_threshold=params.credit_threshold,
            injection_capacity=params.injection_queue_packets,
            check_invariants=params.check_invariants,
        )
        self.tunnel = NetTunnel(self.topo, self.sim, config.payload_max_bytes)
        self.pm_targets: dict[Coord, PostmasterTarget] = {}
        self.nodes: dict[Coord, NodeStack] = {}
        payload_max = config.payload_max_bytes
        for node in self.topo.nodes():
            mux = PacketMux(node, self.network, self.sim)
            demux = PacketDemux(node)
            target = PostmasterTarget(node, params.pm_buffer_bytes, record_headers=params.pm_record_headers,
                                      network=self.network)
            self.pm_targets[node] = target
            initiator = PostmasterInitiator(node, self.pm_targets, payload_max, params.pm_max_packet,
                                            params.pm_queue_bytes)
            eth = EthInterface(node, payload_max, Mode(params.eth_mode), params.eth_mtu, params.eth_ring,
                               self.network, reassembly_timeout_ns=params.reassembly_timeout_ns)
            memory = NodeMemory()
            init_registers(memory, self.topo.index(node), config.cards)
            tunnel_ep = NetTunnelEndpoint(node, memory, self.tunnel)
            self.tunnel.endpoints[node] = tunnel_ep
            for endpoint in (initiator, eth, tunnel_ep):
                endpoint.mux = mux
                mux.add_source(endpoint)
            demux.register(Protocol.POSTMASTER, target)
            demux.register(Protocol.ETHERNET, eth)
            demux.register(Protocol.NET_TUNNEL, tunnel_ep)
            self.network.attach(node, demux.dispatch, mux.wake)
            self.nodes[node] = NodeStack(node, mux, demux, initiator, target, eth, tunnel_ep, memory)

        self.memories = {n: s.memory for n, s in self.nodes.items()}
        self.rings = {
            card: RingBus(card, self.topo.card_nodes(card), self.memories, self.sim, params.ring_hop_ns)
            for card in self.topo.cards()
        }
        self.bridge_channels: list[BridgeFifoChannel] = []
        self.gateways: dict[Coord, Gateway] = {}

    # ------------------------------------------------------------- endpoints

    def open_bridge_fifo(self, src: Coord, dst: Coord, channel: int, width: int = 32) -> BridgeFifoChannel:
        src, dst = self.topo.check(src), self.topo.check(dst)
        ch = BridgeFifoChannel(self.sim, channel, width, src, dst, self.config.payload_max_bytes,
                               self.params.bf_staging_words, self.params.bf_window_ns)
        tx_mux = self.nodes[src].mux
        rx_demux = self.nodes[dst].demux
        # check both ends first so a failure leaves neither half registered
        if channel in rx_demux.bridge_rx or len(rx_demux.bridge_rx) >= MAX_BRIDGE_CHANNELS:
            raise ChannelExhausted(f"bridge FIFO receive channel {channel} unavailable at {dst}")
        if channel in tx_mux.bridge_tx or len(tx_mux.bridge_tx) >= MAX_BRIDGE_CHANNELS:
            raise ChannelExhausted(f"bridge FIFO transmit channel {channel} unavailable at {src}")
        tx_mux.register_bridge_tx(channel, ch)
        rx_demux.register_bridge_rx(channel, ch)
        ch.mux = tx_mux
        self.bridge_channels.append(ch)
        return ch

    def gateway(self, node: Coord | None = None, nat: dict[int, Coord] | None = None) -> Gateway:
        if node is None:
            node = self.topo.nodes_with_role(NodeRole.ETHERNET_GATEWAY)[0]
        node = self.topo.check(node)
        gw = self.gateways.get(node)
        if gw is None:
            gw = self.gateways[node] = Gateway(self.topo, node, self.nodes[node].eth, nat)
        elif nat:
            gw.nat.update(nat)
        return gw

    # -------------------------------------------------------------- sideband

    def ring_access(self, origin: Coord, op: Op) -> Request:
        origin = self.topo.check(origin)
        card = card_of(origin)
        target = getattr(op, "target", None)
        if target is not None and card_of(self.topo.check(target)) != card:
            raise OffCardTarget(f"{target} is not on the same card as {origin}")
        return self.rings[card].access(origin, op)

    def tunnel_access(self, origin: Coord, op: Op):
        return self.tunnel.access(origin, op)

    def read_all(self, card: Coord, addr: int) -> list[tuple[Coord, int]]:
        """Ring Bus read of one address on every node of a card, in ring order."""
        ring = self.rings[Coord(*card)]
        origin = ring.nodes[0]
        reqs = [ring.access(origin, Read(n, addr)) for n in ring.nodes]
        wait(self.sim, reqs)
        return [(r.op.target, r.value) for r in reqs]

    # ------------------------------------------------------------------- run

    def run(self, until: int | None = None) -> dict:
        return self.sim.run_until(until)

    def now(self) -> int:
        return self.sim.now()
