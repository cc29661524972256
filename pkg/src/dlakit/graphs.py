"""Rooted bounded-degree graphs exposed through a neighbour oracle.

Four families are provided:

``Lattice(d)``
    Z^d with nearest-neighbour edges, rooted at the origin.
``RegularTree(k)``
    The k-regular tree.  Vertices are reduced words over ``{0..k-1}`` (no
    letter repeated twice in a row); the root is the empty word, ``w + (a,)``
    is a child and ``w[:-1]`` the parent.  This is the Cayley graph of the
    free product of k copies of Z/2, so no coordinate embedding is needed.
``Carpet(n)``
    The n-dimensional pre-Sierpinski carpet in the first orthant: the unit
    cell ``c`` is kept unless some base-3 digit position has digit 1 in every
    coordinate.  Retained cells are joined across faces.  Rooted at the
    corner cell.
``PercolationCluster``
    The open cluster of the origin for i.i.d. site percolation on a box of
    Z^d (see :func:`build_percolation_cluster`).

Vertices are plain tuples of ints, so equality and ordering are tuple
equality and ordering.
"""

from __future__ import annotations

import math
import re
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
import scipy.ndimage as ndi
import scipy.sparse as sp

from ._validation import check_int, check_real
from .errors import ConstructionError, DomainError, ResourceError

VertexId = tuple

# Site percolation thresholds on Z^d (standard numerical estimates).
SITE_PC = {3: 0.3116077, 4: 0.1968861, 5: 0.1407966, 6: 0.1090178, 7: 0.0889511}


def site_pc(d: int) -> float:
    return SITE_PC.get(d, 1.0 / (2 * d - 1))


# ---------------------------------------------------------------------------
# carpet membership


def ones_mask(c: int) -> int:
    """Bit i is set iff base-3 digit i of ``c`` equals 1."""
    mask = 0
    pos = 0
    while c:
        c, r = divmod(c, 3)
        if r == 1:
            mask |= 1 << pos
        pos += 1
    return mask


def is_in_carpet(n: int, coords: Sequence[int]) -> bool:
    """Membership test for the n-dimensional pre-carpet (first orthant)."""
    n = check_int(n, "n", 2)
    if len(coords) != n:
        raise DomainError(f"expected {n} coordinates, got {len(coords)}")
    if any(c < 0 for c in coords):
        raise DomainError("carpet coordinates must be non-negative")
    common = -1
    for c in coords:
        common &= ones_mask(int(c))
        if not common:
            return True
    return common == 0


def _ones_mask_array(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.int64).copy()
    mask = np.zeros(a.shape, dtype=np.int64)
    pos = 0
    while np.any(a):
        mask |= (a % 3 == 1).astype(np.int64) << pos
        a //= 3
        pos += 1
    return mask


def carpet_member_array(pts: np.ndarray) -> np.ndarray:
    """Vectorised :func:`is_in_carpet` over the rows of ``pts``."""
    pts = np.asarray(pts)
    ok = np.all(pts >= 0, axis=1)
    common = np.full(len(pts), -1, dtype=np.int64)
    for j in range(pts.shape[1]):
        common &= _ones_mask_array(np.where(ok, pts[:, j], 0))
    return ok & (common == 0)


# ---------------------------------------------------------------------------
# truncation boxes


@dataclass
class Box:
    """A finite vertex set with its induced adjacency.

    ``deg`` holds full graph degrees; ``shell[i]`` counts the neighbours of
    vertex ``i`` lying outside the box.  ``dist`` is the distance to the
    sources the box was grown from.
    """

    vertices: object  # (M, d) int array or list of words
    adj: sp.csr_matrix
    deg: np.ndarray
    shell: np.ndarray
    dist: np.ndarray
    _lookup: object

    def __len__(self):
        return len(self.deg)

    def vertex(self, i: int) -> VertexId:
        v = self.vertices[i]
        return tuple(int(x) for x in v)

    def index(self, v: VertexId) -> int:
        """Position of ``v`` in the box, or -1."""
        return self._lookup(tuple(v))

    def indices(self, vs: Iterable[VertexId]) -> np.ndarray:
        out = np.array([self.index(v) for v in vs], dtype=np.int64)
        if np.any(out < 0):
            raise DomainError("vertex outside the truncation box")
        return out


def _csr(rows, cols, m):
    rows = np.concatenate(rows) if rows else np.zeros(0, np.int64)
    cols = np.concatenate(cols) if cols else np.zeros(0, np.int64)
    data = np.ones(len(rows), dtype=np.float64)
    return sp.csr_matrix((data, (rows, cols)), shape=(m, m))


# ---------------------------------------------------------------------------
# families


class Graph:
    """Base class: an immutable rooted graph behind a neighbour oracle."""

    family = "graph"
    #: vertex cap for boxes and balls before a ResourceError is raised
    max_box_vertices = 6_000_000

    root: VertexId
    max_degree: int

    # -- oracle -----------------------------------------------------------
    def contains(self, v) -> bool:
        raise NotImplementedError

    def __contains__(self, v):
        try:
            return self.contains(tuple(v))
        except TypeError:
            return False

    def _nbrs(self, v) -> list:
        """Neighbours of ``v`` without membership validation."""
        raise NotImplementedError

    def _require(self, v):
        v = tuple(v)
        if not self.contains(v):
            raise DomainError(f"vertex {v} is not in {self.tag}")
        return v

    def neighbors(self, v) -> list:
        return self._nbrs(self._require(v))

    def degree(self, v) -> int:
        return len(self.neighbors(v))

    # -- metric -----------------------------------------------------------
    def norm(self, v) -> int:
        """Distance from the root."""
        return self.dist(self.root, v)

    def dist(self, u, v) -> int:
        u, v = self._require(u), self._require(v)
        if u == v:
            return 0
        seen = {u}
        frontier = [u]
        d = 0
        while frontier:
            d += 1
            nxt = []
            for x in frontier:
                for w in self._nbrs(x):
                    if w == v:
                        return d
                    if w not in seen:
                        seen.add(w)
                        nxt.append(w)
            frontier = nxt
            if len(seen) > self.max_box_vertices:
                raise ResourceError("BFS for dist exceeded the vertex budget")
        raise RuntimeError(f"{u} and {v} are disconnected")  # impossible by invariant

    def ball_size(self, v, r: int) -> int:
        r = check_int(r, "r", 0)
        v = self._require(v)
        return len(self._bfs([v], r)[0])

    def _bfs(self, sources, radius):
        dist = {s: 0 for s in sources}
        order = list(dist)
        frontier = list(order)
        for d in range(1, radius + 1):
            nxt = []
            for x in frontier:
                for w in self._nbrs(x):
                    if w not in dist:
                        dist[w] = d
                        nxt.append(w)
            order.extend(nxt)
            frontier = nxt
            if len(order) > self.max_box_vertices:
                raise ResourceError(f"ball of radius {radius} exceeds the vertex budget")
        return order, dist

    def box(self, sources, radius: int) -> Box:
        """All vertices within ``radius`` of ``sources`` with their adjacency."""
        order, dist = self._bfs([tuple(s) for s in sources], radius)
        index = {v: i for i, v in enumerate(order)}
        m = len(order)
        deg = np.zeros(m, np.int64)
        shell = np.zeros(m, np.int64)
        rows, cols = [], []
        for i, v in enumerate(order):
            nb = self._nbrs(v)
            deg[i] = len(nb)
            for w in nb:
                j = index.get(w)
                if j is None:
                    shell[i] += 1
                else:
                    rows.append(i)
                    cols.append(j)
        adj = _csr([np.array(rows, np.int64)], [np.array(cols, np.int64)], m)
        dvec = np.array([dist[v] for v in order], np.int64)
        return Box(order, adj, deg, shell, dvec, lambda v: index.get(v, -1))

    # -- bookkeeping ------------------------------------------------------
    @property
    def tag(self) -> str:
        raise NotImplementedError

    @property
    def transitive(self) -> bool:
        return False

    def sort_key(self, v):
        return v

    def __repr__(self):
        return f"{type(self).__name__}({self.tag!r})"

    def __eq__(self, other):
        return isinstance(other, Graph) and self.tag == other.tag

    def __hash__(self):
        return hash(self.tag)


class _GridGraph(Graph):
    """Shared machinery for families embedded in Z^d."""

    dim: int

    def _member_array(self, pts):
        return np.ones(len(pts), dtype=bool)

    def _nbrs(self, v):
        out = []
        for i in range(self.dim):
            for s in (1, -1):
                w = list(v)
                w[i] += s
                w = tuple(w)
                if self.contains(w):
                    out.append(w)
        return out

    def box(self, sources, radius: int) -> Box:
        src = np.array([tuple(s) for s in sources], dtype=np.int64).reshape(-1, self.dim)
        lo = src.min(0) - radius
        hi = src.max(0) + radius
        lo = self._clip_lo(lo)
        shape = hi - lo + 1
        if int(np.prod(shape)) > self.max_box_vertices * 4:
            raise ResourceError(f"box of radius {radius} exceeds the vertex budget")
        pts = (np.indices(shape, dtype=np.int32).reshape(self.dim, -1).T + lo.astype(np.int32))
        dist = np.full(len(pts), np.iinfo(np.int32).max, dtype=np.int32)
        for s in src:
            dist = np.minimum(dist, np.abs(pts - s.astype(np.int32)).sum(1, dtype=np.int32))
        keep = dist <= radius
        keep &= self._member_array(pts)
        flat_keep = np.flatnonzero(keep)
        coords = pts[flat_keep].astype(np.int64)
        dist = dist[flat_keep].astype(np.int64)
        del pts
        m = len(coords)
        if m > self.max_box_vertices:
            raise ResourceError(f"box of radius {radius} has {m} vertices, over budget")
        lookup = np.full(int(np.prod(shape)), -1, dtype=np.int64)
        lookup[flat_keep] = np.arange(m)
        strides = np.array([int(np.prod(shape[i + 1:])) for i in range(self.dim)], np.int64)
        deg = np.zeros(m, np.int64)
        shell = np.zeros(m, np.int64)
        rows, cols = [], []
        ar = np.arange(m)
        for axis in range(self.dim):
            for s in (1, -1):
                nb = coords.copy()
                nb[:, axis] += s
                valid = self._member_array(nb)
                deg += valid
                rel = nb - lo
                inside = valid & np.all((rel >= 0) & (rel < shape), axis=1)
                j = np.full(m, -1, np.int64)
                j[inside] = lookup[rel[inside] @ strides]
                hit = j >= 0
                rows.append(ar[hit])
                cols.append(j[hit])
                shell += valid & ~hit
        adj = _csr(rows, cols, m)

        def find(v, lo=lo, shape=shape, strides=strides, lookup=lookup):
            rel = np.asarray(v, dtype=np.int64) - lo
            if len(rel) != len(shape) or np.any(rel < 0) or np.any(rel >= shape):
                return -1
            return int(lookup[int(rel @ strides)])

        return Box(coords, adj, deg, shell, dist, find)

    def _clip_lo(self, lo):
        return lo


class Lattice(_GridGraph):
    family = "lattice"

    def __init__(self, d: int):
        self.dim = check_int(d, "d", 1)
        self.root = (0,) * self.dim
        self.max_degree = 2 * self.dim

    @property
    def tag(self):
        return f"z{self.dim}"

    @property
    def transitive(self):
        return True

    def contains(self, v):
        return len(v) == self.dim and all(isinstance(x, (int, np.integer)) for x in v)

    def degree(self, v):
        self._require(v)
        return 2 * self.dim

    def norm(self, v):
        return sum(abs(x) for x in self._require(v))

    def dist(self, u, v):
        u, v = self._require(u), self._require(v)
        return sum(abs(a - b) for a, b in zip(u, v))

    def ball_size(self, v, r):
        r = check_int(r, "r", 0)
        self._require(v)
        d = self.dim
        return sum(2**i * math.comb(d, i) * math.comb(r, i) for i in range(d + 1))


class RegularTree(Graph):
    family = "tree"

    def __init__(self, k: int):
        self.k = check_int(k, "k", 3)
        self.root = ()
        self.max_degree = self.k

    @property
    def tag(self):
        return f"tree{self.k}"

    @property
    def transitive(self):
        return True

    def contains(self, v):
        prev = -1
        for a in v:
            if not isinstance(a, (int, np.integer)) or not 0 <= a < self.k or a == prev:
                return False
            prev = a
        return True

    def _nbrs(self, v):
        last = v[-1] if v else -1
        out = [v[:-1]] if v else []
        out.extend(v + (a,) for a in range(self.k) if a != last)
        return out

    def degree(self, v):
        self._require(v)
        return self.k

    def norm(self, v):
        return len(self._require(v))

    def dist(self, u, v):
        u, v = self._require(u), self._require(v)
        c = 0
        for a, b in zip(u, v):
            if a != b:
                break
            c += 1
        return len(u) + len(v) - 2 * c

    def ball_size(self, v, r):
        r = check_int(r, "r", 0)
        self._require(v)
        k = self.k
        return 1 + k * ((k - 1) ** r - 1) // (k - 2)

    def sort_key(self, v):
        return (len(v), v)


class Carpet(_GridGraph):
    family = "carpet"

    def __init__(self, n: int):
        self.dim = check_int(n, "n", 2)
        self.root = (0,) * self.dim
        self.max_degree = 2 * self.dim

    @property
    def tag(self):
        return f"carpet{self.dim}"

    def contains(self, v):
        if len(v) != self.dim or any(not isinstance(x, (int, np.integer)) or x < 0 for x in v):
            return False
        return is_in_carpet(self.dim, v)

    def _member_array(self, pts):
        return carpet_member_array(pts)

    def _clip_lo(self, lo):
        return np.maximum(lo, 0)

    def norm(self, v):
        # graph distance from the corner equals the L1 norm (checked in tests by BFS)
        return sum(self._require(v))


class PercolationCluster(_GridGraph):
    """Open cluster of the origin inside ``[-box_radius, box_radius]^d``."""

    family = "perc"

    def __init__(self, d, p, box_radius, seed, open_mask, attempts=1):
        self.dim = d
        self.p = p
        self.box_radius = box_radius
        self.seed = seed
        self.attempts = attempts
        self.root = (0,) * d
        self.max_degree = 2 * d
        self._mask = open_mask
        self._off = box_radius
        pts = np.argwhere(open_mask).astype(np.int64) - box_radius
        self.coords = pts
        self._index = {tuple(int(x) for x in v): i for i, v in enumerate(pts)}
        n = len(pts)
        lookup = np.full(open_mask.shape, -1, np.int64)
        lookup[tuple((pts + box_radius).T)] = np.arange(n)
        rows, cols = [], []
        for axis in range(d):
            for s in (1, -1):
                nb = pts + box_radius
                nb[:, axis] += s
                ok = (nb[:, axis] >= 0) & (nb[:, axis] < open_mask.shape[axis])
                j = np.full(n, -1, np.int64)
                j[ok] = lookup[tuple(nb[ok].T)]
                rows.append(np.flatnonzero(j >= 0))
                cols.append(j[j >= 0])
        self.csr = _csr(rows, cols, n)
        self.indptr = self.csr.indptr.astype(np.int64)
        self.indices = self.csr.indices.astype(np.int64)
        self.root_index = self._index[self.root]
        self.dist_root = self._bfs_index(self.root_index)

    def _bfs_index(self, s):
        dist = np.full(len(self.coords), -1, np.int64)
        dist[s] = 0
        q = deque([s])
        indptr, indices = self.indptr, self.indices
        while q:
            i = q.popleft()
            di = dist[i] + 1
            for j in indices[indptr[i]:indptr[i + 1]]:
                if dist[j] < 0:
                    dist[j] = di
                    q.append(j)
        return dist

    @property
    def tag(self):
        return f"perc:{self.dim}:{self.p:g}:{self.box_radius}:{self.seed}"

    def __len__(self):
        return len(self.coords)

    def vertices(self):
        return [tuple(int(x) for x in v) for v in self.coords]

    def contains(self, v):
        return tuple(v) in self._index

    def index_of(self, v):
        return self._index[tuple(v)]

    def _nbrs(self, v):
        i = self._index[v]
        return [tuple(int(x) for x in self.coords[j]) for j in self.indices[self.indptr[i]:self.indptr[i + 1]]]

    def _member_array(self, pts):
        rel = pts + self._off
        ok = np.all((rel >= 0) & (rel < self._mask.shape[0]), axis=1)
        out = np.zeros(len(pts), dtype=bool)
        out[ok] = self._mask[tuple(rel[ok].T)]
        return out

    def norm(self, v):
        return int(self.dist_root[self._index[self._require(v)]])

    def dist(self, u, v):
        u, v = self._require(u), self._require(v)
        return int(self._bfs_index(self._index[u])[self._index[v]])

    def ball_size(self, v, r):
        r = check_int(r, "r", 0)
        d = self._bfs_index(self._index[self._require(v)])
        return int(np.count_nonzero((d >= 0) & (d <= r)))


def build_percolation_cluster(d: int, p: float, box_radius: int, seed: int,
                              max_retries: int = 50) -> PercolationCluster:
    """Site percolation on ``[-box_radius, box_radius]^d``, cluster of the origin.

    Configurations are resampled (seed path ``(seed, attempt)``) until the
    origin is open and its cluster reaches the box boundary, which stands in
    for conditioning on the origin lying in the infinite cluster.
    """
    d = check_int(d, "d", 3)
    p = check_real(p, "p", 0.0, 1.0)
    box_radius = check_int(box_radius, "box_radius", 1)
    seed = check_int(seed, "seed", 0)
    if p <= site_pc(d):
        raise DomainError(f"p={p} is not supercritical (p_c({d}) ~ {site_pc(d):.4f})")
    side = 2 * box_radius + 1
    origin = (box_radius,) * d
    for attempt in range(max_retries):
        gen = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(attempt,))))
        open_ = gen.random((side,) * d) < p
        if not open_[origin]:
            continue
        labels, _ = ndi.label(open_)
        cluster = labels == labels[origin]
        touches = any(cluster.take(0, axis=a).any() or cluster.take(-1, axis=a).any()
                      for a in range(d))
        if touches:
            return PercolationCluster(d, p, box_radius, seed, cluster, attempts=attempt + 1)
    raise ConstructionError(
        f"no spanning origin cluster after {max_retries} samples "
        f"(d={d}, p={p}, box_radius={box_radius}); p may be too close to p_c")


# ---------------------------------------------------------------------------
# family grammar

_FAMILY_RE = [
    (re.compile(r"^z(\d+)$"), lambda m: Lattice(int(m[1]))),
    (re.compile(r"^tree(\d+)$"), lambda m: RegularTree(int(m[1]))),
    (re.compile(r"^carpet(\d+)$"), lambda m: Carpet(int(m[1]))),
    (re.compile(r"^perc:(\d+):([0-9.eE+-]+):(\d+):(\d+)$"),
     lambda m: build_percolation_cluster(int(m[1]), float(m[2]), int(m[3]), int(m[4]))),
]


def parse_family(text: str) -> Graph:
    """Build a graph from ``z<d>``, ``tree<k>``, ``carpet<n>`` or ``perc:<d>:<p>:<box>:<seed>``."""
    text = text.strip()
    for rx, make in _FAMILY_RE:
        m = rx.match(text)
        if m:
            return make(m)
    raise DomainError(f"unknown graph family {text!r}")


def parse_vertex(g: Graph, text: str) -> VertexId:
    """``root`` or comma-separated integers (tree words use letters)."""
    text = text.strip()
    if text in ("root", "o", ""):
        return g.root
    try:
        v = tuple(int(x) for x in text.split(","))
    except ValueError as exc:
        raise DomainError(f"cannot parse vertex {text!r}") from exc
    return g._require(v)


def format_vertex(v: VertexId) -> str:
    return ",".join(str(x) for x in v) if v else "root"


# module-level operation names


def neighbors(g: Graph, v) -> list:
    return g.neighbors(v)


def dist(g: Graph, u, v) -> int:
    return g.dist(u, v)


def ball_size(g: Graph, v, r: int) -> int:
    return g.ball_size(v, r)


def tree_ball_floor_radius(k: int, n_vertices: int) -> int:
    """Smallest r with |B_r| >= n_vertices in the k-regular tree."""
    r = 0
    size = 1
    while size < n_vertices:
        r += 1
        size = 1 + k * ((k - 1) ** r - 1) // (k - 2)
    return r
