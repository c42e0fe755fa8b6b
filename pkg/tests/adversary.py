"""Random sender/receiver pair that tries hard to break credit accounting."""

import random
from dataclasses import dataclass, field

from incsim.engine import Simulator
from incsim.errors import OverFree
from incsim.fabric import Blocked, CreditedLink, Wire
from incsim.topology import Axis, Coord, LinkSpec, Span


@dataclass
class AdversaryReport:
    attempts: int = 0
    accepted: int = 0
    blocked_credits: int = 0
    blocked_busy: int = 0
    overfree_rejected: int = 0
    bytes_sent: int = 0
    bytes_arrived: int = 0
    bytes_freed: int = 0
    max_buffered_ratio: float = 0.0
    violations: list = field(default_factory=list)


def make_lanes(sim: Simulator, n: int, rng: random.Random) -> list[CreditedLink]:
    lanes = []
    for i in range(n):
        spec = LinkSpec(Coord(i, 0, 0), Coord(i + 1, 0, 0), Span.SINGLE, Axis.X, 1)
        wire = Wire(spec.bandwidth)
        cap = rng.choice([288, 1024, 3072, 4096])
        thr = rng.choice([1, 64, 256, cap])
        # two lanes per wire, like the fabric's adaptive/escape pair
        lanes.append(CreditedLink(spec, sim, cap, rng.randrange(1, 900), thr, wire, check=True))
        lanes.append(CreditedLink(spec, sim, cap // 2, rng.randrange(1, 900), thr, wire, check=True))
    return lanes


def run_adversary(attempts: int, seed: int = 0, nlanes: int = 4) -> AdversaryReport:
    rng = random.Random(seed)
    sim = Simulator(seed)
    lanes = make_lanes(sim, nlanes, rng)
    rep = AdversaryReport()

    def arrived(nbytes):
        rep.bytes_arrived += nbytes

    def check(lane):
        if not lane.conserved() or lane.rx_buffered > lane.rx_capacity:
            rep.violations.append((sim.now(), lane.spec, lane.tx_credits, lane.in_flight, lane.rx_buffered))

    while rep.attempts < attempts:
        lane = rng.choice(lanes)
        action = rng.random()
        if action < 0.6:
            # oversized requests on purpose: up to twice the capacity
            nbytes = rng.randrange(1, 2 * lane.rx_capacity)
            rep.attempts += 1
            result = lane.try_transmit(nbytes, arrived, nbytes)
            if result is Blocked.INSUFFICIENT_CREDITS:
                rep.blocked_credits += 1
            elif result is Blocked.LINK_BUSY:
                rep.blocked_busy += 1
            else:
                rep.accepted += 1
                rep.bytes_sent += nbytes
        elif action < 0.85:
            if lane.rx_buffered:
                n = rng.randrange(1, lane.rx_buffered + 1)
                lane.free_and_credit(n)
                rep.bytes_freed += n
            elif rng.random() < 0.1:
                try:
                    lane.free_and_credit(1)
                except OverFree:
                    rep.overfree_rejected += 1
        elif action < 0.97:
            sim.step()
        else:
            sim.run_until(sim.now() + rng.randrange(0, 2000))
        check(lane)
        ratio = lane.rx_buffered / lane.rx_capacity
        if ratio > rep.max_buffered_ratio:
            rep.max_buffered_ratio = ratio

    # drain: let everything land, consume it, let the credits come home
    while True:
        sim.run_until()
        busy = [l for l in lanes if l.rx_buffered]
        if not busy:
            break
        for l in busy:
            rep.bytes_freed += l.rx_buffered
            l.free_and_credit(l.rx_buffered)
    for l in lanes:
        check(l)
        if l.tx_credits != l.rx_capacity:
            rep.violations.append(("credits not restored", l.spec, l.tx_credits, l.rx_capacity))
    return rep
