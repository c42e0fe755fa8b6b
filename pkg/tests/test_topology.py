import json
import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from incsim.errors import InvalidExtent, NotCardOrigin, OddExtent, OutOfBounds
from incsim.topology import (
    Axis,
    Coord,
    NodeRole,
    Span,
    SystemConfig,
    axis_hops,
    build_topology,
    card_of,
    preset,
)

import oracles

GB = 10**9


@pytest.fixture(scope="module")
def inc3000():
    return build_topology(preset("inc3000"))


@pytest.fixture(scope="module")
def inc9000():
    return build_topology(preset("inc9000"))


@pytest.mark.parametrize("name,nodes,cards", [("card", 27, 1), ("inc3000", 432, 16), ("inc9000", 1728, 64)])
def test_census(name, nodes, cards):
    topo = build_topology(preset(name))
    census = topo.link_census()
    assert census["nodes"] == nodes
    assert census["cards"] == cards
    assert census["links"] == oracles.directed_link_count(topo.dims)


def test_card_has_only_single_span_links():
    topo = build_topology(preset("card"))
    assert all(s.span is Span.SINGLE for s in topo.links.values())
    assert len(topo.links) == 108


def test_every_link_has_its_reverse(inc3000):
    for spec in inc3000.links.values():
        back = spec.reverse()
        assert inc3000.links[(back.src, back.port)] == back


def test_neighbours_match_oracle(inc3000):
    for node in inc3000.nodes():
        assert sorted(inc3000.neighbors(node)) == sorted(oracles.neighbours(node, inc3000.dims))


def test_roles_per_card(inc3000):
    for role in (NodeRole.PCIE_CONTROLLER, NodeRole.ETHERNET_GATEWAY, NodeRole.PCIE_AUX):
        nodes = inc3000.nodes_with_role(role)
        assert len(nodes) == 16
        assert len({card_of(n) for n in nodes}) == 16
    assert inc3000.role(Coord(3, 0, 0)) is NodeRole.PCIE_CONTROLLER
    assert inc3000.role(Coord(1, 1, 1)) is NodeRole.COMPUTE


def test_bfs_matches_oracle_on_card_all_pairs():
    topo = build_topology(preset("card"))
    for src in topo.nodes():
        assert topo.bfs_distances(src) == {Coord(*k): v for k, v in oracles.bfs(src, topo.dims).items()}


def test_bfs_matches_oracle_inc3000_sampled(inc3000):
    rng = random.Random(1)
    nodes = list(inc3000.nodes())
    for src in rng.sample(nodes, 12):
        ref = oracles.bfs(src, inc3000.dims)
        for dst in nodes:
            assert inc3000.min_hops(src, dst) == ref[tuple(dst)]


def test_closed_form_agrees_with_bfs_on_10k_inc9000_pairs(inc9000):
    rng = random.Random(9000)
    nodes = list(inc9000.nodes())
    sources = rng.sample(nodes, 40)
    checked = 0
    for src in sources:
        for _ in range(250):
            dst = rng.choice(nodes)
            assert inc9000.closed_form_hops(src, dst) == inc9000.min_hops(src, dst)
            checked += 1
    assert checked >= 10_000


@pytest.mark.parametrize("d,expected", [(0, 0), (1, 1), (2, 2), (3, 1), (4, 2), (5, 3), (6, 2), (11, 5), (-7, 3)])
def test_axis_hops_examples(d, expected):
    assert axis_hops(d) == expected


def test_diameter_examples(inc3000):
    assert inc3000.min_hops(Coord(0, 0, 0), Coord(11, 11, 2)) == 5 + 5 + 2


def _dims():
    return st.tuples(*(st.integers(1, 3).map(lambda k: 3 * k) for _ in range(3)))


@given(dims=_dims(), data=st.data())
def test_distance_properties(dims, data):
    topo = build_topology(SystemConfig(dims=dims))
    coord = st.tuples(*(st.integers(0, n - 1) for n in dims)).map(lambda t: Coord(*t))
    a, b, c = data.draw(coord), data.draw(coord), data.draw(coord)
    ab = topo.min_hops(a, b)
    assert ab == topo.min_hops(b, a)
    assert ab == topo.closed_form_hops(a, b)
    assert (ab == 0) == (a == b)
    assert topo.min_hops(a, c) <= ab + topo.min_hops(b, c)


@given(dims=_dims())
def test_link_counts_match_enumeration(dims):
    topo = build_topology(SystemConfig(dims=dims))
    assert len(topo.links) == oracles.directed_link_count(dims)
    for (node, port), spec in topo.links.items():
        assert topo.in_bounds(spec.dst)
        assert spec.src == node and spec.port == port


def test_bisection_inc3000(inc3000):
    assert inc3000.bisection_bandwidth(Axis.X) == 288 * GB
    assert inc3000.bisection_bandwidth(Axis.Y) == 288 * GB
    assert oracles.bisection_links(inc3000.dims, 0) == 288
    with pytest.raises(OddExtent):
        inc3000.bisection_bandwidth(Axis.Z)


def test_bisection_inc9000_matches_enumeration(inc9000):
    # The vendor figure is 864 GB/s; counting links gives 1152.
    for axis in Axis:
        assert inc9000.bisection_bandwidth(axis) == oracles.bisection_links(inc9000.dims, axis) * GB
    assert inc9000.bisection_bandwidth(Axis.X) == 1152 * GB


def test_offcard_interior_and_boundary(inc9000):
    interior = inc9000.offcard_link_count(Coord(3, 3, 3))
    assert interior.count == 432 and not interior.boundary
    assert interior.bandwidth == 432 * GB
    corner = inc9000.offcard_link_count(Coord(0, 0, 0))
    assert corner.boundary
    assert corner.count == oracles.offcard_links(inc9000.dims, (0, 0, 0))
    assert corner.count < 432


def test_offcard_matches_oracle_everywhere(inc3000):
    for card in inc3000.cards():
        origin = Coord(*(3 * v for v in card))
        assert inc3000.offcard_link_count(origin).count == oracles.offcard_links(inc3000.dims, origin)


def test_offcard_rejects_non_origin(inc3000):
    with pytest.raises(NotCardOrigin):
        inc3000.offcard_link_count(Coord(1, 0, 0))


@pytest.mark.parametrize("dims", [(4, 3, 3), (0, 3, 3), (3, 3, -3)])
def test_invalid_extent(dims):
    with pytest.raises(InvalidExtent):
        SystemConfig(dims=dims)


def test_unknown_preset():
    with pytest.raises(InvalidExtent):
        preset("inc5000")


def test_out_of_bounds(inc3000):
    with pytest.raises(OutOfBounds):
        inc3000.check(Coord(12, 0, 0))
    with pytest.raises(OutOfBounds):
        inc3000.min_hops(Coord(0, 0, 0), Coord(0, 0, 3))


def test_card_nodes_ring_order(inc3000):
    nodes = inc3000.card_nodes(Coord(1, 0, 0))
    assert nodes[0] == Coord(3, 0, 0) and nodes[1] == Coord(4, 0, 0) and nodes[3] == Coord(3, 1, 0)
    assert len(set(nodes)) == 27 and all(card_of(n) == Coord(1, 0, 0) for n in nodes)


def test_coord_parse():
    assert Coord.parse("1,2,0") == Coord(1, 2, 0)
    assert Coord.parse("120") == Coord(1, 2, 0)
    with pytest.raises(ValueError):
        Coord.parse("1,2")


def test_export_roundtrip(tmp_path):
    topo = build_topology(preset("card"))
    path = tmp_path / "card.json"
    topo.export(path)
    data = json.loads(path.read_text())
    assert data["dims"] == [3, 3, 3]
    assert len(data["nodes"]) == 27 and len(data["links"]) == 108
    assert {n["role"] for n in data["nodes"]} == {"PcieController", "EthernetGateway", "PcieAux", "Compute"}
