"""Bridge FIFO: an ordered word FIFO between two nodes, carried over the fabric.

The transmit half packs pushed words into packets tagged with a per-channel
sequence number.  The receive half keeps a reorder buffer keyed by sequence
number and releases words only once every earlier packet has arrived, so pops
come out in push order even though the fabric may reorder packets.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

from ..engine import Simulator
from ..errors import ConfigError
from ..router import Packet, Protocol
from ..topology import Coord

MIN_WIDTH = 7
MAX_WIDTH = 64


@dataclass
class FifoStats:
    pushed: int = 0
    popped: int = 0
    packets_sent: int = 0
    packets_received: int = 0
    backpressure: int = 0
    max_reorder: int = 0
    latencies: list = field(default_factory=list)


class BridgeFifoChannel:
    def __init__(
        self,
        sim: Simulator,
        channel: int,
        width: int,
        src: Coord,
        dst: Coord,
        payload_max: int,
        staging_words: int = 1024,
        window_ns: int = 0,
    ):
        if not MIN_WIDTH <= width <= MAX_WIDTH:
            raise ConfigError(f"bridge FIFO width must be {MIN_WIDTH}..{MAX_WIDTH} bits, got {width}")
        if not 0 <= channel < 32:
            raise ConfigError(f"bridge FIFO channel must be 0..31, got {channel}")
        self.sim = sim
        self.channel = channel
        self.width = width
        self.src = Coord(*src)
        self.dst = Coord(*dst)
        self.word_bytes = (width + 7) // 8
        self.words_per_packet = payload_max // self.word_bytes
        if self.words_per_packet < 1:
            raise ConfigError("payload limit is smaller than one FIFO word")
        self.staging_words = staging_words
        self.window_ns = window_ns
        self.mux = None  # set when attached to the source node

        self._staged: deque[tuple[int, int]] = deque()
        self._ready: deque[Packet] = deque()
        self._ready_words = 0
        self._flush_pending = False
        self._tx_seq = 0

        self._expected = 0
        self._reorder: dict[int, Packet] = {}
        self._out: deque[tuple[int, int]] = deque()
        self.stats = FifoStats()

    # ---------------------------------------------------------------- transmit

    def push(self, word: int) -> bool:
        """Queue one word.  False when transmit staging is full (backpressure)."""
        if not 0 <= word < (1 << self.width):
            raise ValueError(f"word {word:#x} does not fit in {self.width} bits")
        if len(self._staged) + self._ready_words >= self.staging_words:
            self.stats.backpressure += 1
            return False
        self._staged.append((word, self.sim.now()))
        self.stats.pushed += 1
        if not self._flush_pending:
            self._flush_pending = True
            self.sim.after(self.window_ns, self._flush)
        return True

    def _flush(self) -> None:
        self._flush_pending = False
        staged = self._staged
        nbytes = self.word_bytes
        while staged:
            count = min(len(staged), self.words_per_packet)
            chunk = [staged.popleft() for _ in range(count)]
            payload = b"".join(w.to_bytes(nbytes, "little") for w, _ in chunk)
            pkt = Packet(Protocol.BRIDGE_FIFO, self.src, self.dst, self.channel, self._tx_seq, payload)
            pkt.meta = [t for _, t in chunk]
            self._tx_seq += 1
            self._ready.append(pkt)
            self._ready_words += count
        if self.mux is not None:
            self.mux.wake()

    def has_pending(self) -> bool:
        return bool(self._ready)

    def pull(self, now: int) -> Packet:
        pkt = self._ready.popleft()
        self._ready_words -= len(pkt.meta)
        self.stats.packets_sent += 1
        return pkt

    # ----------------------------------------------------------------- receive

    def receive(self, pkt: Packet, now: int) -> bool:
        self.stats.packets_received += 1
        if pkt.seq < self._expected or pkt.seq in self._reorder:
            raise ValueError(f"duplicate bridge FIFO packet seq {pkt.seq} on channel {self.channel}")
        self._reorder[pkt.seq] = pkt
        if len(self._reorder) > self.stats.max_reorder:
            self.stats.max_reorder = len(self._reorder)
        while self._expected in self._reorder:
            ready = self._reorder.pop(self._expected)
            self._expected += 1
            data = ready.payload
            nbytes = self.word_bytes
            for i, t_push in enumerate(ready.meta):
                word = int.from_bytes(data[i * nbytes:(i + 1) * nbytes], "little")
                self._out.append((word, now))
                self.stats.latencies.append(now - t_push)
        return True

    def pop(self) -> int | None:
        """Next word in push order, or None when nothing has arrived."""
        if not self._out:
            return None
        self.stats.popped += 1
        return self._out.popleft()[0]

    def peek_arrival(self) -> int | None:
        """Virtual time the next poppable word became available."""
        return self._out[0][1] if self._out else None

    def __len__(self) -> int:
        return len(self._out)

    @property
    def reorder_occupancy(self) -> int:
        return len(self._reorder)
