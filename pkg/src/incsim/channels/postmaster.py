"""Postmaster DMA: a tunneled queue.

An initiator writes to one fixed queue address; each write becomes a
postmaster packet sent to a target node, fragmented to fit the fabric payload
limit.  The target stages fragments until a packet is whole, then appends its
bytes contiguously to a linear receive buffer.  Packets from different
initiators interleave in arrival order.  Packets from one initiator are
stored in send order: a per-(initiator, target) sequence number holds back a
completed packet until its predecessors have been stored.

With record headers on, each stored packet is preceded by an 8-byte
``>BBBxI`` header: initiator x, y, z, pad, payload length.
"""

from __future__ import annotations

import struct
from collections import deque
from dataclasses import dataclass, field
from typing import Mapping

from ..errors import ConfigError, PayloadTooLarge, UnknownTarget, ZeroLength
from ..router import Network, Packet, Protocol
from ..topology import Coord

QUEUE_ADDRESS = 0x4000_0000
BUFFER_BASE = 0x1000_0000
RECORD_HEADER = struct.Struct(">BBBxI")


class BadQueueAddress(ValueError):
    pass


@dataclass
class InitiatorStats:
    packets: int = 0
    bytes: int = 0
    backpressure: int = 0


class PostmasterInitiator:
    def __init__(
        self,
        node: Coord,
        targets: Mapping[Coord, "PostmasterTarget"],
        payload_max: int,
        max_packet: int = 2048,
        queue_bytes: int = 16384,
        queue_address: int = QUEUE_ADDRESS,
    ):
        if -(-max_packet // payload_max) > 256:
            raise ConfigError("postmaster packets would need more than 256 fabric fragments")
        self.node = Coord(*node)
        self.targets = targets
        self.payload_max = payload_max
        self.max_packet = max_packet
        self.queue_bytes = queue_bytes
        self.queue_address = queue_address
        self.mux = None
        self._seq: dict[Coord, int] = {}
        self._queue: deque[Packet] = deque()
        self._queued_bytes = 0
        self.stats = InitiatorStats()

    def write(self, address: int, target: Coord, data: bytes) -> bool:
        """Store to the queue port; only the fixed queue address is writable."""
        if address != self.queue_address:
            raise BadQueueAddress(f"postmaster queue lives at {self.queue_address:#x}, not {address:#x}")
        return self.send(target, data)

    def send(self, target: Coord, data: bytes) -> bool:
        """Queue one postmaster packet for ``target``.  False means the queue is full."""
        target = Coord(*target)
        if not data:
            raise ZeroLength("postmaster packets carry at least one byte")
        if len(data) > self.max_packet:
            raise PayloadTooLarge(f"postmaster packet of {len(data)} bytes exceeds {self.max_packet}")
        if target not in self.targets:
            raise UnknownTarget(f"no postmaster target registered at {target}")
        if self._queued_bytes + len(data) > self.queue_bytes:
            self.stats.backpressure += 1
            return False
        seq = self._seq.get(target, 0)
        self._seq[target] = seq + 1
        step = self.payload_max
        nfrags = -(-len(data) // step)
        for i in range(nfrags):
            chunk = bytes(data[i * step:(i + 1) * step])
            self._queue.append(Packet(Protocol.POSTMASTER, self.node, target, 0, seq, chunk, i, i == nfrags - 1))
        self._queued_bytes += len(data)
        self.stats.packets += 1
        self.stats.bytes += len(data)
        if self.mux is not None:
            self.mux.wake()
        return True

    def has_pending(self) -> bool:
        return bool(self._queue)

    def pull(self, now: int) -> Packet:
        pkt = self._queue.popleft()
        self._queued_bytes -= len(pkt.payload)
        return pkt


@dataclass
class StoredRecord:
    initiator: Coord
    seq: int
    offset: int  # of the payload, relative to the buffer base
    length: int
    t_stored: int


@dataclass
class TargetStats:
    records: int = 0
    bytes: int = 0
    refused: int = 0
    max_staged: int = 0
    latencies: list = field(default_factory=list)


class PostmasterTarget:
    def __init__(
        self,
        node: Coord,
        size: int = 16 * 1024 * 1024,
        base_address: int = BUFFER_BASE,
        record_headers: bool = True,
        network: Network | None = None,
    ):
        self.node = Coord(*node)
        self.size = size
        self.base_address = base_address
        self.record_headers = record_headers
        self.network = network
        self.buffer = bytearray()
        self.log: list[StoredRecord] = []
        self._partial: dict[tuple[Coord, int], dict[int, bytes]] = {}
        self._totals: dict[tuple[Coord, int], int] = {}
        self._first_seen: dict[tuple[Coord, int], int] = {}
        self._done: dict[Coord, dict[int, tuple[bytes, int]]] = {}
        self._expected: dict[Coord, int] = {}
        self.stats = TargetStats()

    @property
    def write_offset(self) -> int:
        return len(self.buffer)

    @property
    def full(self) -> bool:
        """A completed packet is waiting for room that this session cannot give."""
        return any(
            self._expected.get(src, 0) in held and not self._fits(len(held[self._expected.get(src, 0)][0]))
            for src, held in self._done.items()
        )

    def _fits(self, length: int) -> bool:
        extra = RECORD_HEADER.size if self.record_headers else 0
        return len(self.buffer) + extra + length <= self.size

    def receive(self, pkt: Packet, now: int) -> bool:
        if self.full:
            # stalled: leave the fragment in the link buffer so credits dry up upstream
            self.stats.refused += 1
            return False
        key = (pkt.src, pkt.seq)
        frags = self._partial.setdefault(key, {})
        self._first_seen.setdefault(key, pkt.t_inject)
        frags[pkt.frag] = pkt.payload
        if pkt.last:
            self._totals[key] = pkt.frag + 1
        staged = sum(len(f) for f in self._partial.values())
        if staged > self.stats.max_staged:
            self.stats.max_staged = staged
        total = self._totals.get(key)
        if total is not None and len(frags) == total:
            data = b"".join(frags[i] for i in range(total))
            del self._partial[key], self._totals[key]
            self._done.setdefault(pkt.src, {})[pkt.seq] = (data, self._first_seen.pop(key))
            self._store_ready(pkt.src, now)
        return True

    def _store_ready(self, src: Coord, now: int) -> None:
        held = self._done.get(src)
        if not held:
            return
        seq = self._expected.get(src, 0)
        while seq in held and self._fits(len(held[seq][0])):
            data, t_first = held.pop(seq)
            if self.record_headers:
                self.buffer += RECORD_HEADER.pack(src.x, src.y, src.z, len(data))
            self.log.append(StoredRecord(src, seq, len(self.buffer), len(data), now))
            self.buffer += data
            self.stats.records += 1
            self.stats.bytes += len(data)
            self.stats.latencies.append(now - t_first)
            seq += 1
        self._expected[src] = seq

    def reset_session(self, now: int) -> bytes:
        """Hand the filled buffer to the consumer and start a fresh one."""
        filled = bytes(self.buffer)
        self.buffer = bytearray()
        self.log = []
        for src in list(self._done):
            self._store_ready(src, now)
        if self.network is not None:
            self.network.retry_deliveries(self.node)
        return filled

    def records(self) -> list[tuple[Coord, bytes]]:
        """Parse the stored stream back into (initiator, payload) records."""
        if not self.record_headers:
            return [(r.initiator, bytes(self.buffer[r.offset:r.offset + r.length])) for r in self.log]
        out = []
        pos = 0
        buf = self.buffer
        while pos < len(buf):
            x, y, z, length = RECORD_HEADER.unpack_from(buf, pos)
            pos += RECORD_HEADER.size
            out.append((Coord(x, y, z), bytes(buf[pos:pos + length])))
            pos += length
        return out
