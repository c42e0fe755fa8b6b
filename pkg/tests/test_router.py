import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from incsim.engine import LatencyModel, Simulator
from incsim.errors import InvalidHeader, PayloadTooLarge, Unroutable
from incsim.router import (
    HEADER_BYTES,
    Network,
    Packet,
    Protocol,
    Reason,
    broadcast_forward_set,
    decode_header,
    encode_header,
    escape_port,
    productive_ports,
    route_directed,
)
from incsim.scenarios import reordering_scenario
from incsim.topology import PORTS, Coord, build_topology, preset

import oracles


@pytest.fixture(scope="module")
def card():
    return build_topology(preset("card"))


@pytest.fixture(scope="module")
def inc3000():
    return build_topology(preset("inc3000"))


def net_for(topo, **kw):
    sim = Simulator()
    net = Network(topo, sim, LatencyModel(), **kw)
    got = []
    for node in topo.nodes():
        net.attach(node, lambda pkt, now, node=node: got.append((node, pkt, now)) or True)
    return sim, net, got


# ----------------------------------------------------------------- headers


@given(
    protocol=st.sampled_from(list(Protocol)),
    src=st.tuples(*[st.integers(0, 255)] * 3),
    dst=st.none() | st.tuples(*[st.integers(0, 254)] * 3),
    channel=st.integers(0, 31),
    seq=st.integers(0, 2**32 - 1),
    frag=st.integers(0, 255),
    last=st.booleans(),
    length=st.integers(0, 256),
)
def test_header_roundtrip(protocol, src, dst, channel, seq, frag, last, length):
    pkt = Packet(protocol, Coord(*src), None if dst is None else Coord(*dst), channel, seq, bytes(length), frag, last)
    raw = encode_header(pkt)
    assert len(raw) == HEADER_BYTES
    back = decode_header(raw)
    assert (back.protocol, back.src, back.dst, back.channel, back.seq, back.frag, back.last) == (
        protocol, pkt.src, pkt.dst, channel, seq, frag, last)
    assert back.meta["payload_len"] == length


def test_header_rejects_bad_channel():
    with pytest.raises(InvalidHeader):
        encode_header(Packet(Protocol.BRIDGE_FIFO, Coord(0, 0, 0), Coord(1, 0, 0), channel=32))


def test_payload_too_large(card):
    sim, net, _ = net_for(card)
    with pytest.raises(PayloadTooLarge):
        net.inject(Coord(0, 0, 0), Packet(Protocol.BRIDGE_FIFO, Coord(0, 0, 0), Coord(1, 0, 0), payload=bytes(257)))


def test_postmaster_broadcast_rejected(card):
    sim, net, _ = net_for(card)
    with pytest.raises(InvalidHeader):
        net.inject(Coord(0, 0, 0), Packet(Protocol.POSTMASTER, Coord(0, 0, 0), None, payload=b"x"))


# ------------------------------------------------------------------ routing


def test_route_examples(inc3000):
    labels = lambda ports: [PORTS[p].label for p in ports]
    o = Coord(0, 0, 0)
    assert labels(productive_ports(inc3000, o, Coord(1, 1, 0))) == ["+Xs", "+Ys"]
    assert labels(productive_ports(inc3000, o, Coord(4, 0, 0))) == ["+Xs", "+Xm"]
    assert labels(productive_ports(inc3000, o, Coord(3, 0, 2))) == ["+Zs", "+Xm"]
    d = route_directed(inc3000, o, Coord(1, 1, 0))
    assert d.reason is Reason.IDLE and PORTS[d.chosen].label == "+Xs"
    busy = route_directed(inc3000, o, Coord(1, 1, 0), lambda p: PORTS[p].label != "+Xs")
    assert PORTS[busy.chosen].label == "+Ys"
    blocked = route_directed(inc3000, o, Coord(1, 1, 0), lambda p: False)
    assert blocked.chosen is None and blocked.reason is Reason.ALL_BUSY_QUEUED
    with pytest.raises(Unroutable):
        route_directed(inc3000, o, o)


def test_productive_ports_are_exactly_the_distance_reducing_ones(inc3000):
    rng = random.Random(3)
    nodes = list(inc3000.nodes())
    for _ in range(300):
        a, b = rng.sample(nodes, 2)
        ref = oracles.bfs(b, inc3000.dims)
        expected = {p for p in inc3000.out_ports[a] if ref[tuple(inc3000.links[(a, p)].dst)] == ref[tuple(a)] - 1}
        assert set(productive_ports(inc3000, a, b)) == expected
        esc = escape_port(inc3000, a, b)
        assert esc in expected


def test_escape_route_is_dimension_ordered(inc3000):
    node, dst = Coord(0, 0, 0), Coord(5, 7, 2)
    axes = []
    while node != dst:
        port = PORTS[escape_port(inc3000, node, dst)]
        axes.append(port.axis)
        node = inc3000.links[(node, escape_port(inc3000, node, dst))].dst
    assert axes == sorted(axes)
    assert len(axes) == inc3000.min_hops(Coord(0, 0, 0), dst)


def test_broadcast_forward_set_covers_mesh_once(inc3000):
    # walk the forwarding rule without the network: every node reached exactly once
    src = Coord(5, 6, 1)
    seen = {src: 1}
    stack = [(src, None)]
    while stack:
        node, arrival = stack.pop()
        for p in broadcast_forward_set(inc3000, node, arrival):
            spec = inc3000.links[(node, p)]
            seen[spec.dst] = seen.get(spec.dst, 0) + 1
            stack.append((spec.dst, (spec.axis, spec.direction)))
    assert len(seen) == 432 and set(seen.values()) == {1}


# ------------------------------------------------------------------ network


def test_directed_delivery_and_latency(card):
    sim, net, got = net_for(card)
    net.inject(Coord(0, 0, 0), Packet(Protocol.BRIDGE_FIFO, Coord(0, 0, 0), Coord(2, 2, 2), payload=bytes(4)))
    sim.run_until()
    (node, pkt, now), = got
    assert node == Coord(2, 2, 2) and pkt.hops == 6 and now == 4724
    assert all(oracles.single_span_step(a, b) for a, b in zip(pkt.path, pkt.path[1:]))
    assert net.quiescent() and net.conserved()


def test_zero_hop_bypasses_router(card):
    sim, net, got = net_for(card)
    net.inject(Coord(1, 1, 1), Packet(Protocol.BRIDGE_FIFO, Coord(1, 1, 1), Coord(1, 1, 1), payload=bytes(4)))
    sim.run_until()
    assert got[0][2] == 250 and got[0][1].hops == 0
    assert all(link.wire.bytes_carried == 0 for link in net.links.values())


def test_broadcast_exactly_once_on_card(card):
    for src in card.nodes():
        sim, net, got = net_for(card)
        net.inject(src, Packet(Protocol.NET_TUNNEL, src, None, payload=b"hi"))
        sim.run_until()
        counts = {}
        for node, pkt, _ in got:
            counts[node] = counts.get(node, 0) + 1
            assert all(oracles.single_span_step(a, b) for a, b in zip(pkt.path, pkt.path[1:]))
        assert counts == {n: 1 for n in card.nodes()}
        assert net.quiescent() and net.conserved()


def test_injection_queue_backpressure(card):
    sim, net, _ = net_for(card, injection_capacity=2)
    src = Coord(0, 0, 0)
    mk = lambda: Packet(Protocol.BRIDGE_FIFO, src, Coord(2, 0, 0), payload=bytes(256))
    assert net.inject(src, mk()) and net.inject(src, mk())
    assert not net.inject(src, mk())
    assert net.injection_backpressure == 1
    sim.run_until()
    assert net.can_inject(src)


def test_all_to_all_heavy_load_drains(card):
    """Every node sends to every other node at once; no deadlock, minimal hops, credits restored."""
    sim, net, got = net_for(card, check_invariants=True)
    rng = random.Random(5)
    nodes = list(card.nodes())
    backlog = {n: [m for m in nodes if m != n] * 3 for n in nodes}
    for q in backlog.values():
        rng.shuffle(q)

    def feed(node):
        q = backlog[node]
        while q and net.can_inject(node):
            net.inject(node, Packet(Protocol.BRIDGE_FIFO, node, q.pop(), payload=bytes(rng.randrange(1, 257))))

    for n in nodes:
        net.attach(n, lambda pkt, now, n=n: got.append((n, pkt, now)) or True, lambda n=n: feed(n))
        feed(n)
    sim.run_until()
    assert len(got) == 26 * 27 * 3
    for node, pkt, _ in got:
        assert pkt.hops == card.min_hops(pkt.src, node)
    assert net.quiescent() and net.conserved()
    assert all(l.tx_credits == l.rx_capacity for l in net.lanes())


def test_refused_delivery_holds_credits_until_retry(card):
    sim = Simulator()
    net = Network(card, sim, LatencyModel())
    accept = {"ok": False}
    got = []

    def dispatch(pkt, now):
        if accept["ok"]:
            got.append(pkt)
            return True
        return False

    dst = Coord(1, 0, 0)
    net.attach(dst, dispatch)
    src = Coord(0, 0, 0)
    net.inject(src, Packet(Protocol.BRIDGE_FIFO, src, dst, payload=bytes(100)))
    sim.run_until()
    lane = net.links[(src, 0)].adaptive
    assert not got and lane.rx_buffered == 116 and not net.quiescent()
    accept["ok"] = True
    net.retry_deliveries(dst)
    sim.run_until()
    assert len(got) == 1 and net.quiescent() and lane.tx_credits == lane.rx_capacity


def test_reordering_scenario_is_real_and_repeatable():
    a = reordering_scenario()
    b = reordering_scenario()
    assert a.reordered and a.arrival_order == [1, 0]
    assert a.deliveries == b.deliveries
    assert a.deliveries[0][2] != a.deliveries[1][2]  # two different minimal paths
    assert a.popped == a.pushed and a.max_reorder == 2
