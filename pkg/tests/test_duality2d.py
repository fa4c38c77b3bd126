import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fppcomp.competition import CompetitionConfig, run_competition
from fppcomp.duality2d import (
    DualEdge,
    arcs_connected,
    external_boundary,
    is_connected,
    outer_contour,
    peierls_contours,
    star_components,
    strong_boundary_check,
)
from fppcomp.lattice import Box, neighbors
from fppcomp.passage import PassageLaw


def block(w, h, x0=0, y0=0):
    return {(x0 + i, y0 + j) for i in range(w) for j in range(h)}


def random_cluster(seed, size):
    """Eden-style random connected set grown from the origin."""
    rng = np.random.default_rng(seed)
    A = [(0, 0)]
    seen = {(0, 0)}
    while len(A) < size:
        x = A[rng.integers(len(A))]
        y = neighbors(x)[rng.integers(4)]
        if y not in seen:
            seen.add(y)
            A.append(y)
    return seen


def crossing_pairs(A):
    out = set()
    for a in A:
        for b in neighbors(a):
            if b not in A:
                out.add(DualEdge.crossed_by(a, b))
    return out


class TestPeierls:
    def test_singleton(self):
        c = peierls_contours({(0, 0)})
        assert c.edges == {DualEdge((-1, -1), (0, -1)), DualEdge((-1, -1), (-1, 0)), DualEdge((0, -1), (0, 0)), DualEdge((-1, 0), (0, 0))}
        assert c.is_cycle

    def test_square_block(self):
        c = peierls_contours(block(2, 2))
        assert len(c) == 8 and c.is_cycle and len(c.cycles()) == 1

    def test_block_with_hole(self):
        A = block(3, 3) - {(1, 1)}
        c = peierls_contours(A)
        assert len(c) == 16
        assert sorted(len(t) - 1 for t in c.cycles()) == [4, 12]
        outer = outer_contour(A)
        assert len(outer) == 12 and outer.edges < c.edges

    def test_matches_straddling_edges(self):
        A = random_cluster(5, 60)
        assert peierls_contours(A).edges == crossing_pairs(A)

    def test_empty(self):
        assert not peierls_contours(set()).is_cycle


class TestOuterContour:
    def test_singleton(self):
        assert outer_contour({(3, 4)}).edges == peierls_contours({(3, 4)}).edges

    def test_tromino(self):
        c = outer_contour({(0, 0), (1, 0), (0, 1)})
        assert len(c) == 8 and c.is_cycle and len(c.cycles()) == 1

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            outer_contour(set())
        with pytest.raises(ValueError):
            outer_contour({(0, 0), (2, 0)})

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**32), st.integers(1, 200))
    def test_single_closed_trail(self, seed, size):
        A = random_cluster(seed, size)
        c = outer_contour(A)
        assert c.is_cycle
        trails = c.cycles()
        assert len(trails) == 1
        trail = trails[0]
        assert trail[0] == trail[-1]
        steps = list(zip(trail, trail[1:]))
        assert len(steps) == len(set(steps)) == len(c)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**32), st.integers(1, 150))
    def test_involution(self, seed, size):
        for e in peierls_contours(random_cluster(seed, size)).edges:
            assert DualEdge.crossed_by(*e.crossing) == e

    def test_json_is_closed_polyline(self):
        trail = json.loads(outer_contour(block(2, 1)).to_json())[0]
        assert trail[0] == trail[-1] == [-0.5, -0.5]
        assert len(trail) == 7


class TestExternalBoundary:
    box = Box.centered(6, 2)

    def test_singleton(self):
        assert external_boundary({(0, 0)}, set(), self.box).d_ext == {(0, 0)}

    def test_block(self):
        A = block(3, 3, -1, -1)
        assert external_boundary(A, set(), self.box).d_ext == A - {(0, 0)}

    def test_annulus(self):
        ring = block(7, 7, -3, -3) - block(3, 3, -1, -1)
        outer = block(7, 7, -3, -3) - block(5, 5, -2, -2)
        b = external_boundary(ring, ring, self.box)
        assert b.d_ext == outer == b.d_ext_strong
        assert (0, 0) not in b.c_ext and (6, 6) in b.c_ext
        assert not b.touches_frame

    def test_frame_contact_and_saturation(self):
        assert external_boundary({(6, 0)}, set(), self.box).touches_frame
        full = external_boundary(set(self.box.sites()), set(), self.box)
        assert full.saturated

    def test_strong_must_be_occupied(self):
        with pytest.raises(ValueError):
            external_boundary({(0, 0)}, {(1, 0)}, self.box)


class TestStarComponents:
    def test_diagonal_pair(self):
        assert len(star_components({(0, 0), (1, 1)})) == 1

    def test_separated_pair(self):
        assert star_components({(0, 0), (2, 0)}) == [frozenset({(0, 0)}), frozenset({(2, 0)})]

    def test_empty(self):
        assert star_components(set()) == []


def test_strong_boundary_is_star_connected_during_runs():
    law1, law2 = PassageLaw.exponential("1"), PassageLaw.exponential("1.5")
    for seed in range(8):
        cfg = CompetitionConfig(Box.centered(25, 2), (0, 0), (1, 0), law1, law2, master_seed=seed)
        trace = run_competition(cfg)
        times = trace.event_times
        for t in times[:: max(1, len(times) // 15)]:
            m1, m2 = trace.masks(t)
            check = strong_boundary_check(m1, m2, cfg.box)
            assert check.ok, (seed, t, check)


def test_outer_arcs_of_each_species_are_connected():
    law1, law2 = PassageLaw.exponential("1"), PassageLaw.exponential("1.5")
    tested = 0
    for seed in range(8):
        cfg = CompetitionConfig(Box.centered(20, 2), (0, 0), (1, 0), law1, law2, master_seed=seed)
        trace = run_competition(cfg)
        for t in trace.event_times[2:200:7]:
            m1, m2 = trace.masks(t)
            lo = np.array(cfg.box.lo)
            A = {tuple(map(int, x + lo)) for x in np.argwhere(m1)}
            B = {tuple(map(int, x + lo)) for x in np.argwhere(m2)}
            if A and B and is_connected(A) and is_connected(B) and is_connected(A | B):
                assert arcs_connected(A, B) == (True, True)
                tested += 1
    assert tested > 20
