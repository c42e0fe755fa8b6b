"""Reference computations that share no code with the package.

Neighbours are generated straight from coordinates and distances come from a
plain breadth-first search, so agreement with the package is evidence rather
than a tautology.
"""

from collections import deque
from itertools import product

STEPS = [(a, s) for a in range(3) for s in (1, -1, 3, -3)]


def neighbours(node, dims):
    for axis, step in STEPS:
        c = list(node)
        c[axis] += step
        if 0 <= c[axis] < dims[axis]:
            yield tuple(c)


def all_nodes(dims):
    return [(x, y, z) for z in range(dims[2]) for y in range(dims[1]) for x in range(dims[0])]


def bfs(src, dims):
    src = tuple(src)
    dist = {src: 0}
    q = deque([src])
    while q:
        u = q.popleft()
        for v in neighbours(u, dims):
            if v not in dist:
                dist[v] = dist[u] + 1
                q.append(v)
    return dist


def directed_link_count(dims):
    return sum(1 for n in all_nodes(dims) for _ in neighbours(n, dims))


def bisection_links(dims, axis):
    cut = dims[axis] // 2
    count = 0
    for n in all_nodes(dims):
        for m in neighbours(n, dims):
            if min(n[axis], m[axis]) < cut <= max(n[axis], m[axis]):
                count += 1
    return count


def offcard_links(dims, origin):
    """Directed links with exactly one end on the card (leaving plus entering)."""
    card = {tuple(o + d for o, d in zip(origin, off)) for off in product(range(3), repeat=3)}
    return sum(1 for n in all_nodes(dims) for m in neighbours(n, dims) if (n in card) != (m in card))


def single_span_step(a, b):
    return sum(abs(p - q) for p, q in zip(a, b)) == 1
