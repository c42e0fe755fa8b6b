"""Card, cage and system mesh topologies.

Nodes sit on a global integer grid.  A card is a 3x3x3 block; card membership
and card-local coordinates are always derived by div/mod 3.  Every node has
single-span links to its orthogonal neighbours and multi-span links to nodes
three away along one axis, whenever the far end is inside the mesh (no
wraparound).
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Iterator, NamedTuple

from .errors import InvalidExtent, NotCardOrigin, OddExtent, OutOfBounds

CARD_EDGE = 3
GB_PER_S = 1_000_000_000


class Coord(NamedTuple):
    x: int
    y: int
    z: int

    def __str__(self) -> str:
        return f"{self.x},{self.y},{self.z}"

    @classmethod
    def parse(cls, text: str) -> "Coord":
        """Accept ``"1,2,0"`` or the compact card label form ``"120"``."""
        text = text.strip()
        if "," in text:
            parts = [int(p) for p in text.split(",")]
        elif text.isdigit() and len(text) == 3:
            parts = [int(ch) for ch in text]
        else:
            raise ValueError(f"cannot parse node coordinate {text!r}")
        if len(parts) != 3:
            raise ValueError(f"cannot parse node coordinate {text!r}")
        return cls(*parts)


class Axis(IntEnum):
    X = 0
    Y = 1
    Z = 2


class Span(Enum):
    SINGLE = 1
    MULTI = 3


class NodeRole(Enum):
    COMPUTE = "Compute"
    ETHERNET_GATEWAY = "EthernetGateway"
    PCIE_CONTROLLER = "PcieController"
    PCIE_AUX = "PcieAux"


_CARD_ROLES = {
    (0, 0, 0): NodeRole.PCIE_CONTROLLER,
    (1, 0, 0): NodeRole.ETHERNET_GATEWAY,
    (2, 0, 0): NodeRole.PCIE_AUX,
}


class Port(NamedTuple):
    axis: Axis
    direction: int
    span: Span

    @property
    def step(self) -> int:
        return self.direction * self.span.value

    @property
    def label(self) -> str:
        sign = "+" if self.direction > 0 else "-"
        kind = "s" if self.span is Span.SINGLE else "m"
        return f"{sign}{self.axis.name}{kind}"


# Fixed port order doubles as the routing tie-break order.
PORTS: tuple[Port, ...] = tuple(
    Port(axis, direction, span)
    for span in (Span.SINGLE, Span.MULTI)
    for axis in Axis
    for direction in (1, -1)
)
PORT_INDEX = {p: i for i, p in enumerate(PORTS)}


def port_for(axis: Axis, direction: int, span: Span = Span.SINGLE) -> int:
    return PORT_INDEX[Port(Axis(axis), direction, span)]


@dataclass(frozen=True)
class LinkSpec:
    src: Coord
    dst: Coord
    span: Span
    axis: Axis
    direction: int
    bandwidth: int = GB_PER_S

    @property
    def port(self) -> int:
        return PORT_INDEX[Port(self.axis, self.direction, self.span)]

    def reverse(self) -> "LinkSpec":
        return LinkSpec(self.dst, self.src, self.span, self.axis, -self.direction, self.bandwidth)


@dataclass(frozen=True)
class SystemConfig:
    dims: Coord
    link_bandwidth: int = GB_PER_S
    rx_buffer_bytes: int = 4096
    payload_max_bytes: int = 256

    def __post_init__(self) -> None:
        object.__setattr__(self, "dims", Coord(*self.dims))
        for extent in self.dims:
            if not isinstance(extent, int) or extent <= 0 or extent % CARD_EDGE:
                raise InvalidExtent(
                    f"mesh extents must be positive multiples of {CARD_EDGE}, got {tuple(self.dims)}"
                )
        if self.link_bandwidth <= 0 or self.rx_buffer_bytes <= 0 or self.payload_max_bytes <= 0:
            raise InvalidExtent("bandwidth, buffer and payload sizes must be positive")

    @property
    def cards(self) -> int:
        x, y, z = self.dims
        return (x // 3) * (y // 3) * (z // 3)


PRESETS: dict[str, Coord] = {
    "card": Coord(3, 3, 3),
    "inc3000": Coord(12, 12, 3),
    "inc9000": Coord(12, 12, 12),
}


def preset(name: str, **overrides) -> SystemConfig:
    try:
        dims = PRESETS[name.lower()]
    except KeyError:
        raise InvalidExtent(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return SystemConfig(dims=dims, **overrides)


def card_of(c: Coord) -> Coord:
    return Coord(c.x // 3, c.y // 3, c.z // 3)


def card_local(c: Coord) -> Coord:
    return Coord(c.x % 3, c.y % 3, c.z % 3)


def axis_hops(d: int) -> int:
    """Fewest +-1/+-3 steps covering a displacement of ``d`` along one axis."""
    d = abs(d)
    return d // 3 + d % 3


@dataclass(frozen=True)
class OffCardCount:
    count: int
    boundary: bool

    @property
    def bandwidth(self) -> int:
        return self.count * GB_PER_S


@dataclass
class Topology:
    config: SystemConfig
    roles: dict[Coord, NodeRole]
    links: dict[tuple[Coord, int], LinkSpec]
    out_ports: dict[Coord, tuple[int, ...]]
    _bfs_cache: dict[Coord, dict[Coord, int]] = field(default_factory=dict, repr=False)

    @property
    def dims(self) -> Coord:
        return self.config.dims

    @property
    def node_count(self) -> int:
        return len(self.roles)

    def nodes(self) -> Iterator[Coord]:
        return iter(self.roles)

    def in_bounds(self, c: Coord) -> bool:
        return all(0 <= v < n for v, n in zip(c, self.dims))

    def check(self, c: Coord) -> Coord:
        c = Coord(*c)
        if not self.in_bounds(c):
            raise OutOfBounds(f"node {c} outside mesh {tuple(self.dims)}")
        return c

    def link(self, node: Coord, port: int) -> LinkSpec | None:
        return self.links.get((node, port))

    def neighbors(self, node: Coord) -> Iterator[Coord]:
        for p in self.out_ports[node]:
            yield self.links[(node, p)].dst

    def index(self, c: Coord) -> int:
        x, y, _ = self.dims
        return c.x + x * (c.y + y * c.z)

    def role(self, c: Coord) -> NodeRole:
        return self.roles[self.check(c)]

    def nodes_with_role(self, role: NodeRole) -> list[Coord]:
        return [c for c, r in self.roles.items() if r is role]

    def card_nodes(self, card: Coord) -> list[Coord]:
        """Nodes of one card in ring order (ascending card-local x + 3y + 9z)."""
        ox, oy, oz = card.x * 3, card.y * 3, card.z * 3
        return [Coord(ox + x, oy + y, oz + z) for z in range(3) for y in range(3) for x in range(3)]

    def cards(self) -> list[Coord]:
        x, y, z = self.dims
        return [Coord(cx, cy, cz) for cz in range(z // 3) for cy in range(y // 3) for cx in range(x // 3)]

    # ------------------------------------------------------------------ metrics

    def bfs_distances(self, src: Coord) -> dict[Coord, int]:
        src = self.check(src)
        cached = self._bfs_cache.get(src)
        if cached is not None:
            return cached
        dist = {src: 0}
        frontier = deque([src])
        while frontier:
            u = frontier.popleft()
            du = dist[u] + 1
            for v in self.neighbors(u):
                if v not in dist:
                    dist[v] = du
                    frontier.append(v)
        if len(self._bfs_cache) > 4096:
            self._bfs_cache.clear()
        self._bfs_cache[src] = dist
        return dist

    def min_hops(self, a: Coord, b: Coord) -> int:
        """Shortest path length in the link graph, by breadth-first search."""
        b = self.check(b)
        return self.bfs_distances(a)[b]

    def closed_form_hops(self, a: Coord, b: Coord) -> int:
        return sum(axis_hops(q - p) for p, q in zip(a, b))

    def bisection_bandwidth(self, axis: Axis | int) -> int:
        """Bytes/s over every unidirectional link crossing the axis mid-plane."""
        axis = Axis(axis)
        extent = self.dims[axis]
        if extent % 2:
            raise OddExtent(f"extent {extent} along {axis.name} has no balanced cut")
        cut = extent // 2
        total = 0
        for spec in self.links.values():
            lo, hi = sorted((spec.src[axis], spec.dst[axis]))
            if lo < cut <= hi:
                total += spec.bandwidth
        return total

    def offcard_link_count(self, card_origin: Coord) -> OffCardCount:
        card_origin = self.check(card_origin)
        if any(v % 3 for v in card_origin):
            raise NotCardOrigin(f"{card_origin} is not a multiple of 3 in every coordinate")
        card = card_of(card_origin)
        count = 0
        for spec in self.links.values():
            if (card_of(spec.src) == card) != (card_of(spec.dst) == card):
                count += 1
        boundary = any(
            not self.in_bounds(Coord(*(v + 3 * d if i == ax else v for i, v in enumerate(card_origin))))
            for ax in Axis
            for d in (1, -1)
        )
        return OffCardCount(count, boundary)

    def link_census(self) -> dict[str, int]:
        single = sum(1 for s in self.links.values() if s.span is Span.SINGLE)
        return {
            "nodes": self.node_count,
            "cards": self.config.cards,
            "single_span_links": single,
            "multi_span_links": len(self.links) - single,
            "links": len(self.links),
        }

    # ------------------------------------------------------------------ export

    def to_json(self) -> dict:
        return {
            "dims": list(self.dims),
            "nodes": [{"coord": list(c), "role": r.value} for c, r in self.roles.items()],
            "links": [
                {
                    "src": list(s.src),
                    "dst": list(s.dst),
                    "span": s.span.name.lower(),
                    "axis": s.axis.name,
                    "dir": s.direction,
                }
                for s in self.links.values()
            ],
        }

    def export(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, separators=(",", ":"))


def build_topology(config: SystemConfig) -> Topology:
    X, Y, Z = config.dims
    roles: dict[Coord, NodeRole] = {}
    for z in range(Z):
        for y in range(Y):
            for x in range(X):
                c = Coord(x, y, z)
                roles[c] = _CARD_ROLES.get(tuple(card_local(c)), NodeRole.COMPUTE)

    links: dict[tuple[Coord, int], LinkSpec] = {}
    out_ports: dict[Coord, tuple[int, ...]] = {}
    for c in roles:
        ports = []
        for i, port in enumerate(PORTS):
            coords = list(c)
            coords[port.axis] += port.step
            dst = Coord(*coords)
            if not all(0 <= v < n for v, n in zip(dst, config.dims)):
                continue
            links[(c, i)] = LinkSpec(c, dst, port.span, port.axis, port.direction, config.link_bandwidth)
            ports.append(i)
        out_ports[c] = tuple(ports)
    return Topology(config, roles, links, out_ports)
