"""Byte-credit flow control on unidirectional serial links.

The transmitter starts with credits equal to the receiver's buffer size.  It
spends credits as it sends and never sends past zero.  When the receiver frees
buffer space it sends the freed byte count back over the paired reverse link
(out of band, one hop latency, no bandwidth).  Returns are batched: credits go
back once ``credit_threshold`` bytes are pending or the buffer is empty.

At every instant::

    tx_credits + in_flight + rx_buffered + returning == rx_capacity

where ``returning`` is credit freed at the receiver but not yet back at the
transmitter.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

from .engine import Simulator, serialization_ns
from .errors import InternalInvariantViolation, OverFree
from .topology import LinkSpec


class Blocked(Enum):
    INSUFFICIENT_CREDITS = "InsufficientCredits"
    LINK_BUSY = "LinkBusy"


@dataclass
class Wire:
    """The physical serializer; shared by every credit lane on one link."""

    bandwidth: int
    busy_until: int = 0
    busy_ns: int = 0
    bytes_carried: int = 0

    def idle(self, now: int) -> bool:
        return self.busy_until <= now


@dataclass(frozen=True)
class WireTransfer:
    link: LinkSpec
    nbytes: int
    departure: int
    arrival: int


@dataclass
class LinkStats:
    transfers: int = 0
    bytes_accepted: int = 0
    bytes_delivered: int = 0
    credit_stall_ns: int = 0
    credit_returns: int = 0
    max_rx_buffered: int = 0


class CreditedLink:
    def __init__(
        self,
        spec: LinkSpec,
        sim: Simulator,
        rx_capacity: int = 4096,
        hop_latency_ns: int = 720,
        credit_threshold: int = 256,
        wire: Wire | None = None,
        on_credit: Callable[["CreditedLink"], None] | None = None,
        check: bool = False,
    ):
        self.spec = spec
        self.sim = sim
        self.rx_capacity = rx_capacity
        self.hop_latency_ns = hop_latency_ns
        self.credit_threshold = credit_threshold
        self.wire = wire if wire is not None else Wire(spec.bandwidth)
        self.on_credit = on_credit
        self.check = check

        self.tx_credits = rx_capacity
        self.in_flight = 0
        self.rx_buffered = 0
        self._pending_return = 0
        self._returning_in_transit = 0
        self._stall_since: int | None = None
        self.stats = LinkStats()

    @property
    def busy_until(self) -> int:
        return self.wire.busy_until

    @property
    def returning(self) -> int:
        return self._pending_return + self._returning_in_transit

    def conserved(self) -> bool:
        return (
            self.tx_credits + self.in_flight + self.rx_buffered + self.returning == self.rx_capacity
            and self.tx_credits >= 0
            and self.in_flight >= 0
            and self.rx_buffered >= 0
            and self.rx_buffered <= self.rx_capacity
        )

    def assert_conserved(self) -> None:
        if not self.conserved():
            raise InternalInvariantViolation(
                f"credit identity broken on {self.spec.src}->{self.spec.dst}: "
                f"credits={self.tx_credits} in_flight={self.in_flight} "
                f"rx={self.rx_buffered} returning={self.returning} cap={self.rx_capacity}"
            )

    def can_send(self, nbytes: int, now: int) -> Blocked | None:
        if self.tx_credits < nbytes:
            return Blocked.INSUFFICIENT_CREDITS
        if self.wire.busy_until > now:
            return Blocked.LINK_BUSY
        return None

    def try_transmit(
        self,
        nbytes: int,
        on_arrival: Callable[..., None] | None = None,
        *args,
        serial_bytes: int | None = None,
    ) -> int | Blocked:
        """Send ``nbytes`` now, or report why not.  Returns the arrival time.

        ``serial_bytes`` is the share of ``nbytes`` that occupies the wire
        (defaults to all of it); credits are always charged for ``nbytes``.
        On arrival the bytes move into the receive buffer and
        ``on_arrival(*args)`` is called.
        """
        if nbytes <= 0:
            raise ValueError("nbytes must be positive")
        now = self.sim.now()
        blocked = self.can_send(nbytes, now)
        if blocked is not None:
            if blocked is Blocked.INSUFFICIENT_CREDITS and self._stall_since is None:
                self._stall_since = now
            return blocked
        ser = serialization_ns(nbytes if serial_bytes is None else serial_bytes, self.wire.bandwidth)
        self.tx_credits -= nbytes
        self.in_flight += nbytes
        self.wire.busy_until = now + ser
        self.wire.busy_ns += ser
        self.wire.bytes_carried += nbytes
        self.stats.transfers += 1
        self.stats.bytes_accepted += nbytes
        arrival = now + ser + self.hop_latency_ns
        self.sim.schedule(arrival, self._arrive, nbytes, on_arrival, args)
        if self.check:
            self.assert_conserved()
        return arrival

    def _arrive(self, nbytes: int, on_arrival, args) -> None:
        self.complete_transfer(nbytes)
        if on_arrival is not None:
            on_arrival(*args)

    def complete_transfer(self, nbytes: int) -> None:
        if nbytes > self.in_flight:
            raise InternalInvariantViolation(
                f"{nbytes} bytes arrived but only {self.in_flight} in flight on {self.spec.src}->{self.spec.dst}"
            )
        self.in_flight -= nbytes
        self.rx_buffered += nbytes
        self.stats.bytes_delivered += nbytes
        if self.rx_buffered > self.stats.max_rx_buffered:
            self.stats.max_rx_buffered = self.rx_buffered
        if self.check:
            self.assert_conserved()

    def free_and_credit(self, nbytes: int) -> None:
        if nbytes == 0:
            return
        if nbytes < 0 or nbytes > self.rx_buffered:
            raise OverFree(f"freeing {nbytes} bytes with {self.rx_buffered} buffered")
        self.rx_buffered -= nbytes
        self._pending_return += nbytes
        if self._pending_return >= self.credit_threshold or self.rx_buffered == 0:
            amount = self._pending_return
            self._pending_return = 0
            self._returning_in_transit += amount
            self.stats.credit_returns += 1
            self.sim.after(self.hop_latency_ns, self._credit_arrived, amount)
        if self.check:
            self.assert_conserved()

    def _credit_arrived(self, amount: int) -> None:
        self._returning_in_transit -= amount
        self.tx_credits += amount
        if self._stall_since is not None:
            self.stats.credit_stall_ns += self.sim.now() - self._stall_since
            self._stall_since = None
        if self.check:
            self.assert_conserved()
        if self.on_credit is not None:
            self.on_credit(self)


@dataclass
class FabricLink:
    """One unidirectional physical link carrying an adaptive and an escape lane.

    Both lanes share the wire, so they share bandwidth; each has its own
    slice of the receive buffer and its own credit count.
    """

    spec: LinkSpec
    wire: Wire
    adaptive: CreditedLink
    escape: CreditedLink
    lanes: tuple = field(init=False)

    def __post_init__(self) -> None:
        self.lanes = (self.adaptive, self.escape)

    @property
    def rx_buffered(self) -> int:
        return self.adaptive.rx_buffered + self.escape.rx_buffered

    @property
    def credit_stall_ns(self) -> int:
        return self.adaptive.stats.credit_stall_ns + self.escape.stats.credit_stall_ns
