import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dlakit.errors import ConstructionError, DomainError
from dlakit.graphs import (Carpet, Lattice, RegularTree, ball_size, build_percolation_cluster,
                           dist, format_vertex, is_in_carpet, neighbors, parse_family,
                           parse_vertex, tree_ball_floor_radius)

from oracles import bfs_distances, carpet_member, carpet_nbrs, lattice_nbrs


# --- examples ---------------------------------------------------------------

def test_lattice_neighbors_origin():
    nb = neighbors(Lattice(3), (0, 0, 0))
    assert sorted(nb) == sorted([(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)])


def test_tree_root_neighbors():
    assert sorted(neighbors(RegularTree(3), ())) == [(0,), (1,), (2,)]


def test_carpet_removed_cell_is_error():
    with pytest.raises(DomainError):
        neighbors(Carpet(2), (1, 1))


def test_dist_examples():
    assert dist(Lattice(3), (0, 0, 0), (1, 2, 0)) == 3
    assert dist(RegularTree(3), (), (0, 1)) == 2
    assert dist(RegularTree(3), (0, 1), (0, 2)) == 2
    assert dist(RegularTree(3), (0, 1), (1, 0)) == 4


def test_ball_size_examples():
    assert ball_size(Lattice(3), (0, 0, 0), 1) == 7
    assert ball_size(RegularTree(3), (), 2) == 10


def test_carpet_ball_size_matches_bfs():
    g = Carpet(3)
    d = bfs_distances(carpet_nbrs(3), (0, 0, 0), limit=5)
    assert ball_size(g, (0, 0, 0), 5) == len(d)
    d2 = bfs_distances(carpet_nbrs(3), (3, 0, 2), limit=4)
    assert ball_size(g, (3, 0, 2), 4) == len(d2)


def test_is_in_carpet_examples():
    assert not is_in_carpet(2, (1, 1))
    assert is_in_carpet(2, (0, 0))
    assert not is_in_carpet(3, (4, 4, 4))
    with pytest.raises(DomainError):
        is_in_carpet(2, (1, 2, 3))


def test_lattice_ball_size_closed_form_matches_bfs():
    for d in (2, 3, 4):
        dd = bfs_distances(lattice_nbrs(d), (0,) * d, limit=4)
        for r in range(5):
            assert ball_size(Lattice(d), (0,) * d, r) == sum(1 for v in dd.values() if v <= r)


def test_carpet_distance_is_l1_from_corner():
    # graph distance from the corner root equals the L1 norm
    for n, side in ((2, 81), (3, 27)):
        d = bfs_distances(carpet_nbrs(n), (0,) * n, limit=side)
        for v in itertools.product(range(side), repeat=n):
            if sum(v) < side and carpet_member(n, v):
                assert d[v] == sum(v)


def test_carpet_box_matches_oracle():
    g = Carpet(3)
    box = g.box([g.root], 6)
    d = bfs_distances(carpet_nbrs(3), (0, 0, 0), limit=6)
    assert len(box) == len(d)
    for i in range(len(box)):
        assert d[box.vertex(i)] == box.dist[i]


# --- percolation ------------------------------------------------------------

def test_percolation_full_box():
    g = build_percolation_cluster(3, 1.0, 3, seed=1)
    assert len(g) == 7**3


def test_percolation_deterministic_and_connected():
    a = build_percolation_cluster(3, 0.7, 8, seed=42)
    b = build_percolation_cluster(3, 0.7, 8, seed=42)
    assert a.vertices() == b.vertices()
    d = bfs_distances(a.neighbors, a.root)
    assert len(d) == len(a)
    # BFS distances agree with an independent search
    for v in a.vertices()[:: max(1, len(a) // 50)]:
        assert a.norm(v) == d[v]


def test_percolation_density_against_independent_sampler():
    g = build_percolation_cluster(3, 0.7, 20, seed=42)
    # independent oracle: fraction of open sites connected to the box boundary
    from scipy import ndimage

    rng = np.random.default_rng(123)
    thetas = []
    for _ in range(6):
        open_ = rng.random((41,) * 3) < 0.7
        lab, _ = ndimage.label(open_)
        border = np.unique(np.concatenate([lab.take(i, axis=a).ravel()
                                           for a in range(3) for i in (0, -1)]))
        border = border[border > 0]
        thetas.append(np.isin(lab, border).mean())
    theta = float(np.mean(thetas))
    dens = len(g) / 41**3
    assert 0.5 * theta <= dens <= 1.5 * theta


def test_percolation_subcritical_rejected_and_budget():
    with pytest.raises(DomainError):
        build_percolation_cluster(3, 0.2, 5, seed=1)
    with pytest.raises(ConstructionError):
        build_percolation_cluster(3, 0.32, 30, seed=3, max_retries=1)


# --- parsing ----------------------------------------------------------------

def test_parse_family_and_vertex():
    assert parse_family("z3") == Lattice(3)
    assert parse_family("tree4") == RegularTree(4)
    assert parse_family("carpet3") == Carpet(3)
    g = parse_family("perc:3:0.8:4:7")
    assert g.tag == "perc:3:0.8:4:7"
    with pytest.raises(DomainError):
        parse_family("hex3")
    t = RegularTree(3)
    assert parse_vertex(t, "root") == ()
    assert parse_vertex(t, "0,1") == (0, 1)
    with pytest.raises(DomainError):
        parse_vertex(t, "0,0")
    assert format_vertex(()) == "root"


def test_tree_floor_radius():
    assert tree_ball_floor_radius(3, 1) == 0
    assert tree_ball_floor_radius(3, 4) == 1
    assert tree_ball_floor_radius(3, 5) == 2


# --- properties -------------------------------------------------------------

families = st.sampled_from([Lattice(3), Lattice(4), RegularTree(3), RegularTree(5), Carpet(2), Carpet(3)])


def _random_vertex(g, draw):
    if isinstance(g, RegularTree):
        n = draw(st.integers(0, 6))
        word = []
        for _ in range(n):
            a = draw(st.integers(0, g.k - 1))
            if word and a == word[-1]:
                a = (a + 1) % g.k
            word.append(a)
        return tuple(word)
    if isinstance(g, Carpet):
        while True:
            v = tuple(draw(st.integers(0, 40)) for _ in range(g.dim))
            if g.contains(v):
                return v
    return tuple(draw(st.integers(-20, 20)) for _ in range(g.dim))


@st.composite
def graph_and_vertices(draw, k=1):
    g = draw(families)
    return g, [_random_vertex(g, draw) for _ in range(k)]


@given(graph_and_vertices(1))
@settings(max_examples=150, deadline=None)
def test_neighbors_symmetric_no_duplicates(gv):
    g, (v,) = gv
    nb = neighbors(g, v)
    assert len(set(nb)) == len(nb)
    assert v not in nb
    assert len(nb) == g.degree(v) <= g.max_degree
    for w in nb:
        assert v in neighbors(g, w)


@given(graph_and_vertices(1))
@settings(max_examples=60, deadline=None)
def test_regular_degrees(gv):
    g, (v,) = gv
    if isinstance(g, Lattice):
        assert g.degree(v) == 2 * g.dim
    if isinstance(g, RegularTree):
        assert g.degree(v) == g.k


@given(graph_and_vertices(3))
@settings(max_examples=80, deadline=None)
def test_triangle_inequality(gv):
    g, (a, b, c) = gv
    if isinstance(g, Carpet):
        a, b, c = (tuple(min(x, 12) for x in v) for v in (a, b, c))
        if not all(g.contains(v) for v in (a, b, c)):
            return
    assert dist(g, a, c) <= dist(g, a, b) + dist(g, b, c)


@given(st.integers(2, 3), st.data())
@settings(max_examples=60, deadline=None)
def test_carpet_self_similarity(n, data):
    c = tuple(data.draw(st.integers(0, 30)) for _ in range(n))
    delta = tuple(data.draw(st.sampled_from([0, 2])) for _ in range(n))
    if is_in_carpet(n, c):
        assert is_in_carpet(n, tuple(3 * x + d for x, d in zip(c, delta)))


def test_carpet_membership_exhaustive_against_digit_oracle():
    for n in (2, 3):
        for c in itertools.product(range(30), repeat=n):
            assert is_in_carpet(n, c) == carpet_member(n, c)
