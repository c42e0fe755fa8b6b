"""Remote memory access: the per-card Ring Bus and the system-wide NetTunnel.

Both give read, write and broadcast-write access to any node's 32-bit address
space.  The Ring Bus is a dedicated 27-hop unidirectional ring per card that
never touches the fabric.  Requests and read responses travel forward around
the ring, so any remote read or acknowledged write costs one full lap.
NetTunnel carries the same operations as directed fabric packets, and
broadcast writes ride a fabric broadcast, so it reaches every node in the
system.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Union

from .engine import Simulator
from .errors import OffCardTarget, UnalignedAddress
from .router import Packet, Protocol
from .topology import Coord, Topology

ADDRESS_SPACE = 1 << 32
WORD = 4

# Demo register map, identical on every node.
REG_BUILD_ID = 0xFFFF_0000
REG_TEMPERATURE = 0xFFFF_0004
REG_BOOT_CMD = 0xFFFF_0008
REG_BOOT_STATUS = 0xFFFF_000C
REG_SYSTEM_CARDS = 0xFFFF_0010
REG_NODE_ID = 0xFFFF_0014
REG_EEPROM = 0xFFFF_0100
EEPROM_WORDS = 16
BUILD_ID = 0x1C0D_2020
BOOT_MAGIC = 0x1
TEMPERATURE_C = 42

REGISTERS = {
    "build_id": REG_BUILD_ID,
    "temperature": REG_TEMPERATURE,
    "boot_cmd": REG_BOOT_CMD,
    "boot_status": REG_BOOT_STATUS,
    "system_cards": REG_SYSTEM_CARDS,
    "node_id": REG_NODE_ID,
    "eeprom": REG_EEPROM,
}


def check_address(addr: int) -> int:
    if not 0 <= addr < ADDRESS_SPACE:
        raise UnalignedAddress(f"address {addr:#x} outside the 32-bit space")
    if addr % WORD:
        raise UnalignedAddress(f"address {addr:#x} is not word aligned")
    return addr


class NodeMemory:
    """Sparse word-addressed view of a node's 4 GB space; unwritten words read 0."""

    def __init__(self):
        self.words: dict[int, int] = {}
        self.writes = 0

    def read(self, addr: int) -> int:
        return self.words.get(check_address(addr), 0)

    def write(self, addr: int, word: int) -> None:
        check_address(addr)
        word &= 0xFFFF_FFFF
        self.writes += 1
        if word:
            self.words[addr] = word
        else:
            self.words.pop(addr, None)
        if addr == REG_BOOT_CMD and word == BOOT_MAGIC:
            self.words[REG_BOOT_STATUS] = 1

    def write_block(self, addr: int, data: bytes) -> None:
        check_address(addr)
        if addr + len(data) > ADDRESS_SPACE:
            raise UnalignedAddress("block runs past the end of the address space")
        pad = -len(data) % WORD
        data = bytes(data) + b"\0" * pad
        for i in range(0, len(data), WORD):
            self.write(addr + i, int.from_bytes(data[i:i + WORD], "little"))

    def read_block(self, addr: int, length: int) -> bytes:
        check_address(addr)
        nwords = -(-length // WORD)
        raw = b"".join(self.read(addr + i * WORD).to_bytes(WORD, "little") for i in range(nwords))
        return raw[:length]

    def snapshot(self) -> dict[int, int]:
        return dict(self.words)

    def dump_hex(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for addr in sorted(self.words):
                fh.write(f"{addr:08x} {self.words[addr]:08x}\n")

    @classmethod
    def load_hex(cls, path) -> "NodeMemory":
        mem = cls()
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    a, w = line.split()
                    mem.write(int(a, 16), int(w, 16))
        return mem


def init_registers(mem: NodeMemory, node_id: int, cards: int) -> None:
    mem.write(REG_BUILD_ID, BUILD_ID)
    mem.write(REG_TEMPERATURE, TEMPERATURE_C)
    mem.write(REG_SYSTEM_CARDS, cards)
    mem.write(REG_NODE_ID, node_id)
    for i in range(EEPROM_WORDS):
        mem.write(REG_EEPROM + WORD * i, (0xEE00_0000 | node_id << 8 | i) & 0xFFFF_FFFF)


# ------------------------------------------------------------------ operations


@dataclass(frozen=True)
class Read:
    target: Coord
    addr: int


@dataclass(frozen=True)
class Write:
    target: Coord
    addr: int
    word: int


@dataclass(frozen=True)
class BroadcastWrite:
    addr: int
    word: int


@dataclass(frozen=True)
class BlockWrite:
    """Broadcast of a byte block; the bulk image-load extension."""

    addr: int
    data: bytes


Op = Union[Read, Write, BroadcastWrite, BlockWrite]


@dataclass
class Request:
    op: Op
    origin: Coord
    t_start: int
    done: bool = False
    value: int | None = None
    t_done: int | None = None
    applied: dict = field(default_factory=dict)
    expected: int = 1

    @property
    def latency(self) -> int | None:
        return None if self.t_done is None else self.t_done - self.t_start

    def _apply_at(self, node: Coord) -> None:
        self.applied[node] = self.applied.get(node, 0) + 1

    def _finish(self, now: int, value: int | None = None) -> None:
        self.done = True
        self.t_done = now
        if value is not None:
            self.value = value


class RingBus:
    def __init__(self, card: Coord, nodes: list[Coord], memories: dict[Coord, NodeMemory],
                 sim: Simulator, hop_ns: int = 100):
        self.card = card
        self.nodes = nodes
        self.position = {n: i for i, n in enumerate(nodes)}
        self.memories = memories
        self.sim = sim
        self.hop_ns = hop_ns
        self.hops = 0

    def distance(self, a: Coord, b: Coord) -> int:
        return (self.position[b] - self.position[a]) % len(self.nodes)

    def access(self, origin: Coord, op: Op) -> Request:
        if origin not in self.position:
            raise OffCardTarget(f"{origin} is not on card {tuple(self.card)}")
        now = self.sim.now()
        req = Request(op, origin, now)
        lap = len(self.nodes) * self.hop_ns
        if isinstance(op, (Read, Write)):
            check_address(op.addr)
            if op.target not in self.position:
                raise OffCardTarget(f"{op.target} is not on card {tuple(self.card)}")
            k = self.distance(origin, op.target)
            self.hops += len(self.nodes) if k else 0
            self.sim.schedule(now + k * self.hop_ns, self._at_target, req)
            self.sim.schedule(now + (lap if k else 0), self._finish, req)
        else:
            check_address(op.addr)
            req.expected = len(self.nodes)
            self.hops += len(self.nodes)
            for j in range(len(self.nodes)):
                node = self.nodes[(self.position[origin] + j) % len(self.nodes)]
                self.sim.schedule(now + j * self.hop_ns, self._apply_broadcast, req, node)
            self.sim.schedule(now + lap, self._finish, req)
        return req

    def _at_target(self, req: Request) -> None:
        op = req.op
        mem = self.memories[op.target]
        if isinstance(op, Read):
            req.value = mem.read(op.addr)
        else:
            mem.write(op.addr, op.word)
            req._apply_at(op.target)

    def _apply_broadcast(self, req: Request, node: Coord) -> None:
        op = req.op
        if isinstance(op, BlockWrite):
            self.memories[node].write_block(op.addr, op.data)
        else:
            self.memories[node].write(op.addr, op.word)
        req._apply_at(node)

    def _finish(self, req: Request) -> None:
        req._finish(self.sim.now())


# ------------------------------------------------------------------ NetTunnel

_TUNNEL = struct.Struct(">BIIH")
READ_REQ, READ_RESP, WRITE_REQ, WRITE_ACK, BCAST_WORD, BCAST_BLOCK = range(1, 7)


class NetTunnelEndpoint:
    """NetTunnel logic on one node: a transmit queue feeding the mux plus the remote-access server."""

    def __init__(self, node: Coord, memory: NodeMemory, tunnel: "NetTunnel"):
        self.node = node
        self.memory = memory
        self.tunnel = tunnel
        self.mux = None
        self._queue: list[Packet] = []
        self._head = 0
        self.served = 0

    def send(self, dst: Coord | None, kind: int, req_id: int, addr: int, data: bytes = b"") -> None:
        payload = _TUNNEL.pack(kind, req_id, addr, len(data)) + data
        self._queue.append(Packet(Protocol.NET_TUNNEL, self.node, dst, 0, req_id, payload))
        if self.mux is not None:
            self.mux.wake()

    def has_pending(self) -> bool:
        return self._head < len(self._queue)

    def pull(self, now: int) -> Packet:
        pkt = self._queue[self._head]
        self._head += 1
        if self._head > 1024 and self._head * 2 > len(self._queue):
            del self._queue[:self._head]
            self._head = 0
        return pkt

    def receive(self, pkt: Packet, now: int) -> bool:
        kind, req_id, addr, n = _TUNNEL.unpack_from(pkt.payload)
        data = pkt.payload[_TUNNEL.size:_TUNNEL.size + n]
        mem = self.memory
        if kind == READ_REQ:
            self.served += 1
            self.send(pkt.src, READ_RESP, req_id, addr, mem.read(addr).to_bytes(WORD, "little"))
        elif kind == WRITE_REQ:
            self.served += 1
            mem.write(addr, int.from_bytes(data, "little"))
            self.tunnel._applied(req_id, self.node, now)
            self.send(pkt.src, WRITE_ACK, req_id, addr)
        elif kind == READ_RESP:
            self.tunnel._complete(req_id, now, int.from_bytes(data, "little"))
        elif kind == WRITE_ACK:
            self.tunnel._complete(req_id, now)
        elif kind == BCAST_WORD:
            mem.write(addr, int.from_bytes(data, "little"))
            self.tunnel._applied(req_id, self.node, now)
        elif kind == BCAST_BLOCK:
            mem.write_block(addr, data)
            self.tunnel._applied(req_id, self.node, now)
        return True


class NetTunnel:
    """System-wide request bookkeeping for NetTunnel accesses."""

    def __init__(self, topo: Topology, sim: Simulator, payload_max: int):
        self.topo = topo
        self.sim = sim
        self.payload_max = payload_max
        self.endpoints: dict[Coord, NetTunnelEndpoint] = {}
        self.requests: dict[int, Request] = {}
        self._next_id = 1

    @property
    def block_chunk(self) -> int:
        return (self.payload_max - _TUNNEL.size) // WORD * WORD

    def access(self, origin: Coord, op: Op) -> Request | list[Request]:
        origin = self.topo.check(origin)
        check_address(op.addr)
        ep = self.endpoints[origin]
        now = self.sim.now()
        if isinstance(op, BlockWrite):
            return self.block_write(origin, op.addr, op.data)
        req = Request(op, origin, now)
        rid = self._register(req)
        if isinstance(op, Read):
            self.topo.check(op.target)
            ep.send(op.target, READ_REQ, rid, op.addr)
        elif isinstance(op, Write):
            self.topo.check(op.target)
            ep.send(op.target, WRITE_REQ, rid, op.addr, (op.word & 0xFFFF_FFFF).to_bytes(WORD, "little"))
        else:
            req.expected = self.topo.node_count
            ep.send(None, BCAST_WORD, rid, op.addr, (op.word & 0xFFFF_FFFF).to_bytes(WORD, "little"))
        return req

    def block_write(self, origin: Coord, addr: int, data: bytes) -> list[Request]:
        """Broadcast ``data`` to ``addr`` on every node, one request per fabric packet."""
        origin = self.topo.check(origin)
        check_address(addr)
        ep = self.endpoints[origin]
        now = self.sim.now()
        chunk = self.block_chunk
        reqs = []
        for off in range(0, max(len(data), 1), chunk):
            op = BlockWrite(addr + off, bytes(data[off:off + chunk]))
            req = Request(op, origin, now, expected=self.topo.node_count)
            ep.send(None, BCAST_BLOCK, self._register(req), op.addr, op.data)
            reqs.append(req)
        return reqs

    def _register(self, req: Request) -> int:
        rid = self._next_id
        self._next_id += 1
        self.requests[rid] = req
        return rid

    def _applied(self, rid: int, node: Coord, now: int) -> None:
        req = self.requests[rid]
        req._apply_at(node)
        if isinstance(req.op, (BroadcastWrite, BlockWrite)) and len(req.applied) == req.expected:
            self._complete(rid, now)

    def _complete(self, rid: int, now: int, value: int | None = None) -> None:
        req = self.requests.pop(rid)
        req._finish(now, value)


def wait(sim: Simulator, requests: Request | list[Request], limit: int | None = None) -> None:
    """Advance the simulation just until every request has completed."""
    reqs = requests if isinstance(requests, list) else [requests]
    sim.run_while(lambda: not all(r.done for r in reqs), limit)

