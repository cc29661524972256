"""Hitting, escape and Green-function computations on the graph families.

Exact quantities are computed on a finite truncation box with an absorbing
outer shell standing in for infinity (regular trees are solved exactly on
the convex hull of the set); Monte Carlo estimators run the
compiled walk kernels.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import _kernels as K
from ._validation import check_int, check_real
from .errors import BudgetError, DomainError, ResourceError, SolverError
from .graphs import Box, Carpet, Graph, Lattice, PercolationCluster, RegularTree, _GridGraph
from .rng import as_stream

# ones-mask lookup table for carpet coordinates below 3**8
_CARPET_TAB = np.array([sum(1 << i for i in range(8) if (c // 3**i) % 3 == 1)
                        for c in range(3**8)], dtype=np.int64)

_CHUNK = 512  # walks per reduction chunk; fixed so sums do not depend on workers


# ---------------------------------------------------------------------------
# kernel adapters


def tree_code(word, k):
    code = 0
    for a in word:
        code = code * k + a
    return len(word), code


def tree_word(depth, code, k):
    out = []
    for _ in range(depth):
        code, a = divmod(code, k)
        out.append(int(a))
    return tuple(reversed(out))


def tree_max_depth(k):
    """Deepest level whose vertices fit the 64-bit kernel encoding."""
    return int(57 / math.log2(k))


def _tree_keys(words, k):
    maxd = tree_max_depth(k)
    keys = []
    for w in words:
        if len(w) > maxd:
            raise ResourceError(f"tree vertex at depth {len(w)} beyond kernel limit {maxd}")
        depth, code = tree_code(w, k)
        keys.append(code * 64 + depth)
    return np.array(sorted(keys), dtype=np.int64)


class _MarkGrid:
    """Dense uint8 marks over the bounding box of a vertex set in Z^d."""

    def __init__(self, pts, dim, values=None, pad=0):
        pts = np.asarray(pts, dtype=np.int64).reshape(-1, dim)
        self.lo = pts.min(0) - pad
        hi = pts.max(0) + pad
        self.shape = (hi - self.lo + 1).astype(np.int64)
        self.stride = np.array([int(np.prod(self.shape[i + 1:])) for i in range(dim)], np.int64)
        self.grid = np.zeros(int(np.prod(self.shape)), dtype=np.uint8)
        vals = np.ones(len(pts), np.uint8) if values is None else np.asarray(values, np.uint8)
        self.grid[(pts - self.lo) @ self.stride] = vals

    def args(self):
        return self.grid, self.lo, self.shape, self.stride


# ---------------------------------------------------------------------------
# single walks


@dataclass(frozen=True)
class WalkOutcome:
    """Result of one walk: ``kind`` is ``"hit"`` or ``"escaped"``.

    On trees the walk above the deepest target is advanced by exact
    gambler's-ruin jumps, and ``steps`` counts each jump as one move.
    """

    kind: str
    vertex: tuple | None
    steps: int

    @property
    def hit(self):
        return self.kind == "hit"


def run_walk(g: Graph, start, target: Iterable, escape_radius: int, rng,
             step_cap: int = 10**9) -> WalkOutcome:
    """Simple random walk from ``start`` until it enters ``target`` or passes
    ``escape_radius`` (graph distance from the root)."""
    rng = as_stream(rng)
    start = g._require(start)
    target = [g._require(v) for v in target]
    escape_radius = check_int(escape_radius, "escape_radius", 0)
    if g.norm(start) >= escape_radius and start not in set(target):
        raise DomainError("escape_radius must exceed |start|")
    step_cap = check_int(step_cap, "step_cap", 1)
    if start in set(target):
        return WalkOutcome("hit", start, 0)
    key = rng.kernel_key(int(rng.integers(0, 2**62)))
    if isinstance(g, RegularTree):
        keys = _tree_keys(target, g.k)
        top = max(len(w) for w in target)
        state = np.array(tree_code(start, g.k), dtype=np.int64)
        status, steps, _ = K.tree_walk(state, keys, top, g.k, escape_radius, step_cap,
                                       np.uint64(key), np.uint64(0))
        vertex = tree_word(int(state[0]), int(state[1]), g.k)
    elif isinstance(g, PercolationCluster):
        mark = np.zeros(len(g), np.uint8)
        mark[[g.index_of(v) for v in target]] = 1
        state = np.array([g.index_of(start)], np.int64)
        status, steps, _ = K.csr_walk(state, g.indptr, g.indices, mark, g.dist_root,
                                      escape_radius, step_cap, np.uint64(key), np.uint64(0))
        vertex = tuple(int(x) for x in g.coords[state[0]])
    elif isinstance(g, _GridGraph):
        mg = _MarkGrid(target, g.dim)
        pos = np.array(start, dtype=np.int64)
        status, steps, _ = K.grid_walk(pos, *mg.args(), escape_radius, step_cap,
                                       np.uint64(key), isinstance(g, Carpet), _CARPET_TAB)
        vertex = tuple(int(x) for x in pos)
    else:
        raise DomainError(f"no walk kernel for {g!r}")
    if status == K.BUDGET:
        raise BudgetError(f"walk exceeded step cap {step_cap}")
    if status == K.HIT:
        return WalkOutcome("hit", vertex, int(steps))
    return WalkOutcome("escaped", None, int(steps))


# ---------------------------------------------------------------------------
# heat kernel


def heat_kernel_diag(g: Graph, o, t_max: int, lazy: bool = False,
                     max_vertices: int = 4_000_000, return_mass: bool = False):
    """Exact return probabilities ``p_t(o, o)`` for ``t = 0..t_max``.

    The distribution is pushed on the ball of radius ``t_max // 2`` around
    ``o``; mass leaving the ball cannot come back in time and is parked in an
    absorbing bucket, so the pushed vector (ball + bucket) stays stochastic.
    ``lazy=True`` holds in place with probability 1/2.
    """
    t_max = check_int(t_max, "t_max", 0)
    o = g._require(o)
    radius = t_max // 2
    if g.ball_size(o, radius) > max_vertices:
        raise ResourceError(f"ball of radius {radius} exceeds max_vertices={max_vertices}")
    box = g.box([o], radius)
    i0 = box.index(o)
    inv_deg = 1.0 / box.deg
    leak = box.shell * inv_deg
    adj = box.adj
    pi = np.zeros(len(box))
    pi[i0] = 1.0
    outside = 0.0
    out = np.empty(t_max + 1)
    mass = np.empty(t_max + 1)
    out[0] = 1.0
    mass[0] = 1.0
    for t in range(1, t_max + 1):
        w = pi * inv_deg
        moved = adj @ w
        lost = float(pi @ leak)
        if lazy:
            pi = 0.5 * pi + 0.5 * moved
            outside += 0.5 * lost
        else:
            pi = moved
            outside += lost
        out[t] = pi[i0]
        mass[t] = pi.sum() + outside
    if return_mass:
        return out, mass
    return out


# ---------------------------------------------------------------------------
# Monte Carlo Green function


@dataclass(frozen=True)
class GreenEstimate:
    value: np.ndarray | float
    stderr: np.ndarray | float
    n_walks: int
    cutoff: int


def _visit_runner(g: Graph, x, ys, cutoff, key):
    if isinstance(g, RegularTree):
        keys = _tree_keys(ys, g.k)
        order = np.argsort(np.array([tree_code(y, g.k)[1] * 64 + len(y) for y in ys]))
        start = np.array(tree_code(x, g.k), np.int64)
        maxd = tree_max_depth(g.k)

        def run(first, n):
            c = np.zeros(len(ys))
            s = np.zeros(len(ys))
            K.tree_visits(start, keys, g.k, maxd, cutoff, n, np.uint64(key), first, c, s)
            out_c = np.empty_like(c)
            out_s = np.empty_like(s)
            out_c[order] = c
            out_s[order] = s
            return out_c, out_s
        return run
    if isinstance(g, PercolationCluster):
        mark = np.zeros(len(g), np.int64)
        for i, y in enumerate(ys):
            mark[g.index_of(y)] = i + 1
        start = g.index_of(x)

        def run(first, n):
            c = np.zeros(len(ys))
            s = np.zeros(len(ys))
            K.csr_visits(start, g.indptr, g.indices, mark, len(ys), cutoff, n,
                         np.uint64(key), first, c, s)
            return c, s
        return run
    if isinstance(g, _GridGraph):
        if len(ys) > 254:
            raise DomainError("at most 254 target vertices per call")
        mg = _MarkGrid(ys, g.dim, values=np.arange(1, len(ys) + 1))
        start = np.array(x, np.int64)
        carpet = isinstance(g, Carpet)

        def run(first, n):
            c = np.zeros(len(ys))
            s = np.zeros(len(ys))
            K.grid_visits(start, *mg.args(), len(ys), cutoff, n, np.uint64(key), first,
                          carpet, _CARPET_TAB, c, s)
            return c, s
        return run
    raise DomainError(f"no walk kernel for {g!r}")


def green_mc(g: Graph, x, y, n_walks: int, cutoff: int, rng, workers: int = 1) -> GreenEstimate:
    """Monte Carlo estimate of g(x, y): mean visits to ``y`` within ``cutoff`` steps.

    ``y`` may be a single vertex or a sequence of vertices (one walk sample
    serves all of them).  Truncation at ``cutoff`` can only lose visits, so
    the estimate is biased low.  Results do not depend on ``workers``.
    """
    rng = as_stream(rng)
    n_walks = check_int(n_walks, "n_walks", 1)
    cutoff = check_int(cutoff, "cutoff", 1)
    x = g._require(x)
    single = isinstance(y, tuple) and (len(y) == 0 or not isinstance(y[0], tuple))
    ys = [g._require(y)] if single else [g._require(v) for v in y]
    if len(set(ys)) != len(ys):
        raise DomainError("duplicate target vertices")
    key = rng.kernel_key(int(rng.integers(0, 2**62)))
    run = _visit_runner(g, x, ys, cutoff, key)
    chunks = [(a, min(_CHUNK, n_walks - a)) for a in range(0, n_walks, _CHUNK)]
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            parts = list(ex.map(lambda c: run(*c), chunks))
    else:
        parts = [run(*c) for c in chunks]
    tot = np.zeros(len(ys))
    tot2 = np.zeros(len(ys))
    for c, s in parts:
        tot += c
        tot2 += s
    mean = tot / n_walks
    var = np.maximum(tot2 / n_walks - mean**2, 0.0)
    se = np.sqrt(var / max(n_walks - 1, 1))
    if single:
        return GreenEstimate(float(mean[0]), float(se[0]), n_walks, cutoff)
    return GreenEstimate(mean, se, n_walks, cutoff)


# ---------------------------------------------------------------------------
# exact solves on truncation boxes


@dataclass(frozen=True)
class SolverConfig:
    """Truncation and refinement settings for the exact solver.

    ``center="set"`` grows the box as the ``box_radius``-neighbourhood of
    the set itself (symmetric sets get symmetric boxes); ``center="root"``
    uses the ball of radius ``box_radius`` around the root.
    """

    box_radius: int = 8
    refine_factor: float = 1.5
    rel_tol: float = 1e-3
    max_refinements: int = 5
    center: str = "set"
    lin_tol: float = 1e-12
    extrapolation: str = "auto"

    def __post_init__(self):
        check_int(self.box_radius, "box_radius", 1)
        check_real(self.refine_factor, "refine_factor", 1.0, low_open=True)
        check_real(self.rel_tol, "rel_tol", 0.0, low_open=True)
        check_int(self.max_refinements, "max_refinements", 0)
        if self.center not in ("set", "root"):
            raise DomainError("center must be 'set' or 'root'")
        if self.extrapolation not in ("auto", "aitken", "richardson", "none"):
            raise DomainError("extrapolation must be auto, aitken, richardson or none")

    def radii(self):
        r = [self.box_radius]
        for _ in range(self.max_refinements):
            r.append(max(r[-1] + 1, math.ceil(r[-1] * self.refine_factor)))
        return r


@dataclass
class PotentialSolveResult:
    escape_prob: dict
    equilibrium: dict
    capacity: float
    harmonic: dict
    converged: bool
    achieved_rel_delta: float
    box_radii: list = field(default_factory=list)
    raw_capacities: list = field(default_factory=list)

    def sup_harmonic(self):
        return max(self.harmonic.values()) if self.harmonic else 0.0


def _laplacian(box: Box):
    return (sp.diags(box.deg.astype(np.float64)) - box.adj).tocsc()


def _spd_solve(L, B, tol):
    """Solve L X = B for a sparse SPD Dirichlet Laplacian."""
    B = np.asarray(B, dtype=np.float64)
    one = B.ndim == 1
    if one:
        B = B[:, None]
    n = L.shape[0]
    if n == 0:
        return B[:, 0] if one else B
    if n <= 30_000 or B.shape[1] > 8:
        try:
            X = spla.splu(L.tocsc()).solve(B)
        except RuntimeError as exc:
            raise SolverError(f"sparse factorization failed: {exc}") from exc
    else:
        d = L.diagonal()
        M = sp.diags(1.0 / d)
        X = np.empty_like(B)
        for j in range(B.shape[1]):
            x, info = spla.cg(L, B[:, j], rtol=tol, atol=0.0, M=M, maxiter=20 * n)
            if info != 0:
                raise SolverError(f"CG did not converge (info={info})")
            X[:, j] = x
    resid = np.abs(L @ X - B).max()
    if not np.isfinite(resid) or resid > 1e3 * tol * max(1.0, np.abs(B).max()):
        raise SolverError(f"linear solve residual {resid:.3e} too large")
    return X[:, 0] if one else X


def _check_set(g, A):
    A = sorted({g._require(v) for v in A}, key=g.sort_key)
    if not A:
        raise DomainError("set must be non-empty")
    return A


def _box_for(g, A, radius, center):
    if center == "root":
        if max(g.norm(v) for v in A) > radius - 2:
            raise DomainError("set must lie within box_radius - 2 of the root")
        return g.box([g.root], radius)
    return g.box(A, radius)


def escape_on_box(g: Graph, A: Sequence, radius: int, center: str = "set", tol: float = 1e-12):
    """Escape probabilities P_x[exit box before returning to A], x in A."""
    box = _box_for(g, A, radius, center)
    if box.shell.sum() == 0:
        raise SolverError("truncation box has no outer shell (graph finite at this radius?)")
    ia = box.indices(A)
    in_a = np.zeros(len(box), bool)
    in_a[ia] = True
    free = np.flatnonzero(~in_a)
    L = _laplacian(box)
    u = np.zeros(len(box))
    u[free] = _spd_solve(L[free][:, free], box.shell[free].astype(np.float64), tol)
    flux = box.adj[ia] @ u + box.shell[ia]
    esc = flux / box.deg[ia]
    return np.clip(esc, 0.0, 1.0), box.deg[ia].astype(np.float64)


def _pack(A, esc, deg, converged, delta, radii, caps):
    eq = deg * esc
    cap = float(eq.sum())
    harm = eq / cap if cap > 0 else np.zeros_like(eq)
    return PotentialSolveResult(
        escape_prob={v: float(p) for v, p in zip(A, esc)},
        equilibrium={v: float(e) for v, e in zip(A, eq)},
        capacity=cap,
        harmonic={v: float(h) for v, h in zip(A, harm)},
        converged=converged,
        achieved_rel_delta=float(delta),
        box_radii=list(radii),
        raw_capacities=list(caps),
    )


def _extrapolate(method, radii, caps, escs, dim):
    """Remove truncation error from the last three escape vectors."""
    if len(caps) < 3 or method == "none":
        return escs[-1]
    if method == "richardson":
        # error ~ a R^(2-d) + b R^(1-d) on Z^d
        r = np.asarray(radii[-3:], dtype=np.float64)
        M = np.vstack([np.ones(3), r ** -(dim - 2.0), r ** -(dim - 1.0)]).T
        W = np.linalg.solve(M, np.eye(3))[0]
        return W[0] * escs[-3] + W[1] * escs[-2] + W[2] * escs[-1]
    d1, d2 = caps[-2] - caps[-3], caps[-1] - caps[-2]
    if d1 != 0 and 0 < d2 / d1 < 1:
        q = d2 / d1
        return escs[-1] + (escs[-1] - escs[-2]) * q / (1 - q)
    return escs[-1]


def _tree_hull(A):
    """Vertices on geodesics between members of A (words on a regular tree)."""
    hull = set()
    a0 = A[0]
    for a in A:
        n = 0
        while n < min(len(a), len(a0)) and a[n] == a0[n]:
            n += 1
        for m in range(n, len(a) + 1):
            hull.add(a[:m])
        for m in range(n, len(a0) + 1):
            hull.add(a0[:m])
    return hull


def tree_escape_exact(g: RegularTree, A: Sequence) -> np.ndarray:
    """Escape probabilities of A on the k-regular tree without truncation.

    Off the convex hull H of A every branch is a (k-1)-ary tree free of A,
    and a walk entering it comes back with probability 1/(k-1).  That turns
    the problem into a linear system on H alone.
    """
    k = g.k
    rho = 1.0 / (k - 1)
    in_a = set(A)
    hull = sorted(_tree_hull(list(A)), key=g.sort_key)
    free = [v for v in hull if v not in in_a]
    pos = {v: i for i, v in enumerate(free)}
    hset = set(hull)
    n = len(free)
    M = np.zeros((n, n))
    b = np.zeros(n)
    for v, i in pos.items():
        M[i, i] = 1.0
        for w in g.neighbors(v):
            if w in in_a:
                b[i] += 1.0 / k
            elif w in hset:
                M[i, pos[w]] -= 1.0 / k
            else:
                M[i, i] -= rho / k
    u = np.linalg.solve(M, b) if n else np.zeros(0)
    esc = np.empty(len(A))
    for j, x in enumerate(A):
        back = 0.0
        for w in g.neighbors(x):
            if w in in_a:
                back += 1.0
            elif w in hset:
                back += u[pos[w]]
            else:
                back += rho
        esc[j] = 1.0 - back / k
    return np.clip(esc, 0.0, 1.0)


def solve_escape(g: Graph, A: Iterable, cfg: SolverConfig | None = None) -> PotentialSolveResult:
    """Escape probabilities, equilibrium measure, capacity and harmonic measure of ``A``.

    Boxes grow by ``refine_factor``.  Once three boxes are available the
    truncation error is extrapolated away: on Z^d by Richardson
    extrapolation in powers of 1/R, elsewhere by geometric (Aitken)
    extrapolation using the ratio of successive capacity differences.  The
    loop stops when two successive estimates of the capacity agree to
    ``rel_tol``.  Regular trees need no truncation: see
    :func:`tree_escape_exact`.
    """
    cfg = cfg or SolverConfig()
    A = _check_set(g, A)
    if isinstance(g, RegularTree):
        esc = tree_escape_exact(g, A)
        deg = np.full(len(A), float(g.k))
        return _pack(A, esc, deg, True, 0.0, [], [float((deg * esc).sum())])
    method = cfg.extrapolation
    if method == "auto":
        method = "richardson" if isinstance(g, Lattice) and g.dim >= 3 else "aitken"
    if method == "richardson" and not (isinstance(g, Lattice) and g.dim >= 3):
        raise DomainError("richardson extrapolation needs Lattice(d), d >= 3")
    dim = getattr(g, "dim", 0)
    radii, caps, escs, ests = [], [], [], []
    deg = None
    delta = math.inf
    for r in cfg.radii():
        esc, deg = escape_on_box(g, A, r, cfg.center, cfg.lin_tol)
        radii.append(r)
        escs.append(esc)
        caps.append(float((deg * esc).sum()))
        ests.append(_extrapolate(method, radii, caps, escs, dim))
        if len(ests) >= 2:
            c_new = float((deg * ests[-1]).sum())
            c_old = float((deg * ests[-2]).sum())
            delta = abs(c_new - c_old) / max(abs(c_new), 1e-300)
            if delta < cfg.rel_tol:
                return _pack(A, np.clip(ests[-1], 0, 1), deg, True, delta, radii, caps)
    return _pack(A, np.clip(ests[-1], 0, 1), deg, False, delta, radii, caps)


def green_on_box(g: Graph, A: Sequence, radius: int, center: str = "set", tol: float = 1e-12):
    """Green function of the walk killed at the box shell, restricted to A x A.

    Solves ``(D - Adj) X = e_y`` per column, so ``g(x, y) = deg(y) X[x, y]``.
    """
    box = _box_for(g, A, radius, center)
    ia = box.indices(A)
    L = _laplacian(box)
    rhs = np.zeros((len(box), len(ia)))
    rhs[ia, np.arange(len(ia))] = 1.0
    X = _spd_solve(L, rhs, tol)
    deg = box.deg[ia].astype(np.float64)
    return X[ia] * deg[None, :], deg


class KilledGreen:
    """Killed Green function on one root-centred box, factorized once.

    Used to get exact (box-killed) harmonic measures of many small sets at
    once: for x in A, ``sum_y g(x, y) e_A(y) / deg(y) = 1``.
    """

    def __init__(self, g: Graph, radius: int, core_radius: int):
        self.g = g
        self.radius = radius
        box = g.box([g.root], radius)
        self.box = box
        core = np.flatnonzero(box.dist <= core_radius)
        self.core = core
        self._pos = {g.sort_key(box.vertex(i)): n for n, i in enumerate(core)}
        L = _laplacian(box)
        rhs = np.zeros((len(box), len(core)))
        rhs[core, np.arange(len(core))] = 1.0
        X = spla.splu(L.tocsc()).solve(rhs)
        self.G = X[core] * box.deg[core][None, :].astype(np.float64)
        self.deg = box.deg[core].astype(np.float64)

    def positions(self, A):
        try:
            return np.array([self._pos[self.g.sort_key(v)] for v in A])
        except KeyError as exc:
            raise DomainError(f"vertex {exc} outside the cached core") from exc

    def equilibrium(self, A):
        idx = self.positions(A)
        GA = self.G[np.ix_(idx, idx)]
        x = np.linalg.solve(GA, np.ones(len(idx)))
        return self.deg[idx] * x

    def green(self, A):
        idx = self.positions(A)
        return self.G[np.ix_(idx, idx)]


@dataclass(frozen=True)
class SandwichReport:
    lower: float
    middle: float
    upper: float
    holds: bool
    capacity: float


def capacity_sandwich_check(g: Graph, A: Iterable, cfg: SolverConfig | None = None,
                            tol: float = 1e-6) -> SandwichReport:
    """Check inf_x sum_y g(x,y) <= sum deg / cap(A) <= sup_x sum_y g(x,y).

    Green values and capacity come from two independent solves on the same
    box (radius ``cfg.box_radius``); ``tol`` is relative to the middle term.
    """
    cfg = cfg or SolverConfig()
    A = _check_set(g, A)
    G, deg = green_on_box(g, A, cfg.box_radius, cfg.center, cfg.lin_tol)
    esc, deg2 = escape_on_box(g, A, cfg.box_radius, cfg.center, cfg.lin_tol)
    cap = float((deg2 * esc).sum())
    row = G.sum(axis=1)
    lower, upper = float(row.min()), float(row.max())
    middle = float(deg.sum() / cap)
    slack = tol * middle
    holds = lower - slack <= middle <= upper + slack
    return SandwichReport(lower, middle, upper, holds, cap)


def tree_spectral_bottom(k: int) -> float:
    """Bottom of the spectrum of I - P on the k-regular tree."""
    return 1.0 - 2.0 * math.sqrt(k - 1) / k


def spectral_capacity_check(g: Graph, A: Iterable, lam: float | None = None,
                            cfg: SolverConfig | None = None) -> bool:
    """cap(A) >= lam * sum_{x in A} deg(x) on a non-amenable family."""
    if not isinstance(g, RegularTree):
        raise DomainError("spectral capacity bound applies to non-amenable families (RegularTree)")
    A = list(A)
    if not A:
        return True
    if lam is None:
        lam = tree_spectral_bottom(g.k)
    cfg = cfg or SolverConfig()
    res = solve_escape(g, A, cfg)
    total_deg = sum(g.degree(v) for v in A)
    return res.capacity >= lam * total_deg * (1 - 10 * cfg.rel_tol)
