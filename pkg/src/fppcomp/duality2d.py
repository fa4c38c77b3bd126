"""Planar duality on Z^2: Peierls contours, outer contours, external boundary.

A dual vertex (i, j) stands for the point (i + 1/2, j + 1/2).  A dual edge
crosses exactly one primal edge, and ``DualEdge.crossing`` /
``DualEdge.crossed_by`` are inverse to each other.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable

import numpy as np
from scipy import ndimage

from .lattice import Box

Site = tuple[int, int]
DualVertex = tuple[int, int]

FOUR = ndimage.generate_binary_structure(2, 1)
EIGHT = ndimage.generate_binary_structure(2, 2)
_STEPS = ((1, 0), (-1, 0), (0, 1), (0, -1))


@dataclass(frozen=True, order=True)
class DualEdge:
    u: DualVertex
    v: DualVertex

    def __post_init__(self):
        u, v = tuple(self.u), tuple(self.v)
        if abs(u[0] - v[0]) + abs(u[1] - v[1]) != 1:
            raise ValueError("dual endpoints must be at distance 1")
        if v < u:
            u, v = v, u
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)

    @classmethod
    def crossed_by(cls, a: Site, b: Site) -> "DualEdge":
        """The dual edge forming a unit square with the primal edge {a, b}."""
        a, b = sorted((tuple(a), tuple(b)))
        if b == (a[0] + 1, a[1]):
            return cls((a[0], a[1] - 1), (a[0], a[1]))
        if b == (a[0], a[1] + 1):
            return cls((a[0] - 1, a[1]), (a[0], a[1]))
        raise ValueError("primal endpoints must be nearest neighbours")

    @property
    def crossing(self) -> tuple[Site, Site]:
        (i, j), (k, l) = self.u, self.v
        if i == k:  # vertical dual edge crosses a horizontal primal edge
            return (i, l), (i + 1, l)
        return (k, j), (k, j + 1)

    def points(self) -> tuple[tuple[float, float], tuple[float, float]]:
        return (self.u[0] + 0.5, self.u[1] + 0.5), (self.v[0] + 0.5, self.v[1] + 0.5)


def _directed(a: Site, b: Site) -> tuple[DualVertex, DualVertex]:
    """Dual edge crossing a->b, oriented so that a lies on its left."""
    hx, hy = -(b[1] - a[1]), b[0] - a[0]
    # start point = (a+b)/2 - h/2, shifted into dual integer coordinates
    sx = (a[0] + b[0] - hx - 1) // 2
    sy = (a[1] + b[1] - hy - 1) // 2
    return (sx, sy), (sx + hx, sy + hy)


@dataclass(frozen=True)
class ContourSet:
    """Dual edges, each stored with the orientation that keeps A on its left."""

    directed: frozenset

    @cached_property
    def edges(self) -> frozenset:
        return frozenset(DualEdge(u, v) for u, v in self.directed)

    def __len__(self):
        return len(self.directed)

    def __contains__(self, e: DualEdge):
        return e in self.edges

    def degrees(self) -> dict:
        deg: dict = {}
        for e in self.edges:
            deg[e.u] = deg.get(e.u, 0) + 1
            deg[e.v] = deg.get(e.v, 0) + 1
        return deg

    @property
    def is_cycle(self) -> bool:
        """Nonempty, connected and every vertex of even degree (one closed trail)."""
        if not self.directed:
            return False
        if any(k % 2 for k in self.degrees().values()):
            return False
        return edge_set_connected(self.edges)

    def cycles(self) -> list[list[DualVertex]]:
        """Closed trails as vertex lists (first vertex repeated at the end).

        At a vertex with two ways out the trail turns right, so every trail
        bounds a single 4-connected component of the complement.
        """
        out: dict = {}
        for u, v in self.directed:
            out.setdefault(u, []).append(v)

        def successor(u, v):
            heading = (v[0] - u[0], v[1] - u[1])
            right = (heading[1], -heading[0])
            w = min(out[v], key=lambda w: _turn_rank(heading, right, (w[0] - v[0], w[1] - v[1])))
            return v, w

        used = set()
        trails = []
        for start in sorted(self.directed):
            if start in used:
                continue
            trail = [start[0]]
            e = start
            while e not in used:
                used.add(e)
                trail.append(e[1])
                e = successor(*e)
            trails.append(trail)
        return trails

    def to_json(self) -> str:
        return json.dumps(
            [[[x + 0.5, y + 0.5] for x, y in trail] for trail in self.cycles()],
            separators=(",", ":"),
        )


def _turn_rank(heading, right, step) -> int:
    if step == right:
        return 0
    if step == heading:
        return 1
    return 2


def edge_set_connected(edges: Iterable[DualEdge]) -> bool:
    """Whether the edges form one connected subgraph (vacuously true if empty)."""
    adj: dict = {}
    for e in edges:
        adj.setdefault(e.u, []).append(e.v)
        adj.setdefault(e.v, []).append(e.u)
    if not adj:
        return True
    start = next(iter(adj))
    seen = {start}
    stack = [start]
    while stack:
        x = stack.pop()
        for y in adj[x]:
            if y not in seen:
                seen.add(y)
                stack.append(y)
    return len(seen) == len(adj)


def peierls_contours(A: Iterable[Site]) -> ContourSet:
    """Dual edges whose crossing primal pair has exactly one end in A."""
    A = {tuple(a) for a in A}
    directed = set()
    for a in A:
        for dx, dy in _STEPS:
            b = (a[0] + dx, a[1] + dy)
            if b not in A:
                directed.add(_directed(a, b))
    return ContourSet(frozenset(directed))


def _grid(sites: set, pad: int = 1):
    arr = np.array(sorted(sites), dtype=np.int64).reshape(-1, 2)
    lo = arr.min(axis=0) - pad
    hi = arr.max(axis=0) + pad
    g = np.zeros(hi - lo + 1, dtype=bool)
    g[tuple((arr - lo).T)] = True
    return g, lo


def is_connected(A: Iterable[Site]) -> bool:
    A = {tuple(a) for a in A}
    if not A:
        return True
    g, _ = _grid(A)
    return ndimage.label(g, structure=FOUR)[1] == 1


def unbounded_complement(A: set) -> tuple[np.ndarray, np.ndarray]:
    """Mask of the complement component of A reaching infinity, with its origin."""
    g, lo = _grid(A)
    labels, _ = ndimage.label(~g, structure=FOUR)
    return labels == labels[0, 0], lo


def outer_contour(A: Iterable[Site]) -> ContourSet:
    """The cycle of Peierls(A) separating A from infinity."""
    A = {tuple(a) for a in A}
    if not A:
        raise ValueError("A is empty")
    if not is_connected(A):
        raise ValueError("A must be connected")
    outside, lo = unbounded_complement(A)
    directed = set()
    for a in A:
        for dx, dy in _STEPS:
            b = (a[0] + dx, a[1] + dy)
            if outside[b[0] - lo[0], b[1] - lo[1]]:
                directed.add(_directed(a, b))
    return ContourSet(frozenset(directed))


def arcs_connected(A: Iterable[Site], B: Iterable[Site]) -> tuple[bool, bool]:
    """Connectedness of the parts of the outer contour of A u B touching A and B."""
    A = {tuple(a) for a in A}
    B = {tuple(b) for b in B}
    gamma = outer_contour(A | B).edges
    ea = [e for e in gamma if A.intersection(e.crossing)]
    eb = [e for e in gamma if B.intersection(e.crossing)]
    return edge_set_connected(ea), edge_set_connected(eb)


# ---------------------------------------------------------------------------
# External boundary and *-connectivity on a box


@dataclass
class BoundaryDecomposition:
    box: Box
    c_ext_mask: np.ndarray
    d_ext_mask: np.ndarray
    d_ext_strong_mask: np.ndarray
    saturated: bool
    touches_frame: bool

    def _sites(self, mask) -> set:
        return {tuple(int(c) for c in x + self.box.lo) for x in np.argwhere(mask)}

    @property
    def c_ext(self) -> set:
        return self._sites(self.c_ext_mask)

    @property
    def d_ext(self) -> set:
        return self._sites(self.d_ext_mask)

    @property
    def d_ext_strong(self) -> set:
        return self._sites(self.d_ext_strong_mask)


def _mask(box: Box, sites) -> np.ndarray:
    if isinstance(sites, np.ndarray):
        if sites.shape != box.shape:
            raise ValueError("mask shape does not match the box")
        return sites.astype(bool)
    g = np.zeros(box.shape, dtype=bool)
    sites = list(sites)
    if sites:
        arr = np.array(sites, dtype=np.int64) - np.array(box.lo)
        if np.any(arr < 0) or np.any(arr >= np.array(box.shape)):
            raise ValueError("site outside the box")
        g[tuple(arr.T)] = True
    return g


def external_boundary(occupied, strong, box: Box) -> BoundaryDecomposition:
    """Occupied sites next to the complement component that reaches the frame.

    ``occupied`` and ``strong`` are site collections or box-shaped masks.
    Beyond the frame everything counts as empty, so an occupied frame site is
    always external; such snapshots are flagged with ``touches_frame``.
    """
    if box.d != 2:
        raise ValueError("external_boundary is planar")
    occ = _mask(box, occupied)
    st = _mask(box, strong)
    if np.any(st & ~occ):
        raise ValueError("strong sites must be occupied")
    if occ.all():
        z = np.zeros_like(occ)
        return BoundaryDecomposition(box, z, z.copy(), z.copy(), True, True)
    free = np.pad(~occ, 1, constant_values=True)
    labels, _ = ndimage.label(free, structure=FOUR)
    outside = labels == labels[0, 0]
    near = ndimage.binary_dilation(outside, structure=FOUR)[1:-1, 1:-1]
    d_ext = occ & near
    edge = np.zeros_like(occ)
    edge[0, :] = edge[-1, :] = edge[:, 0] = edge[:, -1] = True
    return BoundaryDecomposition(
        box,
        outside[1:-1, 1:-1],
        d_ext,
        d_ext & st,
        False,
        bool(np.any(occ & edge)),
    )


def star_components(S: Iterable[Site]) -> list[frozenset]:
    """Maximal 8-connected pieces of S, ordered by their smallest site."""
    S = {tuple(s) for s in S}
    if not S:
        return []
    g, lo = _grid(S)
    labels, n = ndimage.label(g, structure=EIGHT)
    comps: list[set] = [set() for _ in range(n)]
    for s in S:
        comps[labels[s[0] - lo[0], s[1] - lo[1]] - 1].add(s)
    return sorted((frozenset(c) for c in comps), key=min)


def star_component_count(mask: np.ndarray) -> int:
    return int(ndimage.label(mask, structure=EIGHT)[1])


@dataclass(frozen=True)
class StarCheck:
    components: int
    touches_frame: bool
    saturated: bool

    @property
    def excluded(self) -> bool:
        return self.touches_frame or self.saturated

    @property
    def ok(self) -> bool:
        return self.excluded or self.components <= 1


def strong_boundary_check(eta1: np.ndarray, eta2: np.ndarray, box: Box) -> StarCheck:
    """*-components of eta2 on the external boundary of eta1 u eta2."""
    b = external_boundary(eta1 | eta2, eta2, box)
    return StarCheck(star_component_count(b.d_ext_strong_mask), b.touches_frame, b.saturated)
