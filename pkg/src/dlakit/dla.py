"""The DLA chain: particles launched from far away stick where they first
touch the aggregate's outer boundary."""

from __future__ import annotations

import io
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Iterable

import numpy as np

from . import _kernels as K
from ._validation import check_int, check_real
from .errors import BudgetError, DLAKitError, DomainError, ResourceError, SamplingError
from .graphs import Carpet, Graph, PercolationCluster, RegularTree, _GridGraph
from .potential import _CARPET_TAB, tree_code, tree_max_depth, tree_word
from .rng import RandomStream, as_stream, counter_draw

SAMPLERS = ("auto", "walk", "exact-tree")


@dataclass(frozen=True)
class LaunchConfig:
    """Launch protocol for one attachment.

    Walkers start uniformly on the sphere of radius
    ``R = ceil(launch_factor * rad) + launch_offset`` and are discarded once
    they pass ``ceil(escape_factor * (rad + launch_offset))``.

    ``sampler="auto"`` uses the exact uniform-boundary law on regular trees
    (see :func:`sample_attachment`) and walkers everywhere else.
    """

    launch_factor: float = 2.0
    launch_offset: int = 5
    escape_factor: float = 4.0
    max_retries: int = 1_000_000
    step_cap: int = 10**9
    sampler: str = "auto"

    def __post_init__(self):
        check_real(self.launch_factor, "launch_factor", 2.0)
        check_int(self.launch_offset, "launch_offset", 2)
        check_real(self.escape_factor, "escape_factor", self.launch_factor, low_open=True)
        check_int(self.max_retries, "max_retries", 1)
        check_int(self.step_cap, "step_cap", 1)
        if self.sampler not in SAMPLERS:
            raise DomainError(f"sampler must be one of {SAMPLERS}")

    def radii(self, rad: int):
        R = math.ceil(self.launch_factor * rad) + self.launch_offset
        E = math.ceil(self.escape_factor * (rad + self.launch_offset))
        return R, max(E, R + 1)

    def resolved_sampler(self, g: Graph) -> str:
        if self.sampler == "auto":
            return "exact-tree" if isinstance(g, RegularTree) else "walk"
        if self.sampler == "exact-tree" and not isinstance(g, RegularTree):
            raise DomainError("exact-tree sampler only applies to RegularTree")
        return self.sampler


# ---------------------------------------------------------------------------
# target marking for the walk kernels


class _GridMarks:
    """Dense uint8 grid over the bounding box of A u dA, regrown on demand."""

    def __init__(self, g: _GridGraph, pts):
        self.dim = g.dim
        self.carpet = isinstance(g, Carpet)
        pts = np.asarray(list(pts), np.int64).reshape(-1, self.dim)
        self._alloc(pts.min(0), pts.max(0), pts)

    def _alloc(self, lo, hi, pts):
        span = hi - lo + 1
        pad = np.maximum(8, span // 2)
        self.lo = lo - pad
        self.shape = (span + 2 * pad).astype(np.int64)
        self.stride = np.array([int(np.prod(self.shape[i + 1:])) for i in range(self.dim)], np.int64)
        self.grid = np.zeros(int(np.prod(self.shape)), np.uint8)
        if len(pts):
            self.grid[(pts - self.lo) @ self.stride] = 1

    def mark(self, vs):
        pts = np.asarray(vs, np.int64).reshape(-1, self.dim)
        rel = pts - self.lo
        if (rel < 0).any() or (rel >= self.shape).any():
            old = np.argwhere(self.grid.reshape(tuple(self.shape)) > 0) + self.lo
            allp = np.vstack([old, pts])
            self._alloc(allp.min(0), allp.max(0), allp)
        else:
            self.grid[rel @ self.stride] = 1

    def attach(self, R, E, first, n, cap, key, out):
        return K.grid_attach(self.grid, self.lo, self.shape, self.stride, R, E, first, n, cap,
                             np.uint64(key), self.carpet, _CARPET_TAB, out)

    def vertex(self, out):
        return tuple(int(x) for x in out)

    def out_buffer(self):
        return np.empty(self.dim, np.int64)


class _TreeMarks:
    def __init__(self, g: RegularTree, vs):
        self.k = g.k
        self.maxd = tree_max_depth(g.k)
        self._keys = []
        self._arr = None
        self.top = 0
        self.mark(vs)

    def mark(self, vs):
        for w in vs:
            if len(w) > self.maxd:
                raise ResourceError(f"tree depth {len(w)} beyond kernel limit {self.maxd}")
            d, c = tree_code(w, self.k)
            self._keys.append(c * 64 + d)
            self.top = max(self.top, d)
        self._arr = None

    def attach(self, R, E, first, n, cap, key, out):
        if self._arr is None:
            self._arr = np.array(sorted(self._keys), np.int64)
        return K.tree_attach(self._arr, self.top, self.k, R, E, first, n, cap, np.uint64(key), out)

    def vertex(self, out):
        return tree_word(int(out[0]), int(out[1]), self.k)

    def out_buffer(self):
        return np.empty(2, np.int64)


class _CsrMarks:
    def __init__(self, g: PercolationCluster, vs):
        self.g = g
        self.m = np.zeros(len(g), np.uint8)
        self._spheres = {}
        self.mark(vs)

    def mark(self, vs):
        for v in vs:
            self.m[self.g.index_of(v)] = 1

    def sphere(self, R):
        s = self._spheres.get(R)
        if s is None:
            s = np.flatnonzero(self.g.dist_root == R).astype(np.int64)
            if len(s) == 0:
                raise ResourceError(f"percolation box too small: no cluster vertex at distance {R}")
            self._spheres[R] = s
        return s

    def attach(self, R, E, first, n, cap, key, out):
        return K.csr_attach(self.g.indptr, self.g.indices, self.m, self.g.dist_root,
                            self.sphere(R), E, first, n, cap, np.uint64(key), out)

    def vertex(self, out):
        return tuple(int(x) for x in self.g.coords[out[0]])

    def out_buffer(self):
        return np.empty(1, np.int64)


def _marks_for(g: Graph, vs):
    if isinstance(g, RegularTree):
        return _TreeMarks(g, vs)
    if isinstance(g, PercolationCluster):
        return _CsrMarks(g, vs)
    if isinstance(g, _GridGraph):
        return _GridMarks(g, vs)
    raise DomainError(f"no walk kernel for {g!r}")


# ---------------------------------------------------------------------------
# aggregate


class Aggregate:
    """A finite connected set grown from the root, with its outer boundary.

    ``members`` keeps attachment order.  The boundary is kept in an
    insertion-ordered list with swap-removal, so its order is a function of
    the attachment history alone (never of hashing).
    """

    def __init__(self, g: Graph, members: Iterable | None = None):
        self.g = g
        self.root = g.root
        self.members = []
        self._mset = set()
        self._blist = []
        self._bpos = {}
        self.radius = 0
        self.t = 0
        self._marks = None
        self._add(g._require(self.root))
        if members is not None:
            members = list(members)
            if not members or tuple(members[0]) != tuple(self.root):
                raise DomainError("member list must start at the root")
            for v in members[1:]:
                self.add(v)

    # bookkeeping
    @property
    def n0(self):
        return 1

    @property
    def boundary(self):
        return set(self._blist)

    def boundary_list(self):
        return list(self._blist)

    def sorted_members(self):
        return sorted(self.members, key=self.g.sort_key)

    def sorted_boundary(self):
        return sorted(self._blist, key=self.g.sort_key)

    def __len__(self):
        return len(self.members)

    def __contains__(self, v):
        return v in self._mset

    def _add(self, v):
        self.members.append(v)
        self._mset.add(v)
        if v in self._bpos:
            i = self._bpos.pop(v)
            last = self._blist.pop()
            if i < len(self._blist):
                self._blist[i] = last
                self._bpos[last] = i
        new = []
        for w in self.g.neighbors(v):
            if w not in self._mset and w not in self._bpos:
                self._bpos[w] = len(self._blist)
                self._blist.append(w)
                new.append(w)
        self.radius = max(self.radius, self.g.norm(v))
        if self._marks is not None and new:
            self._marks.mark(new)
        return new

    def add(self, v):
        """Attach ``v`` (must be a boundary vertex)."""
        v = self.g._require(v)
        if v not in self._bpos:
            raise DomainError(f"{v} is not on the aggregate boundary")
        self._add(v)
        self.t += 1

    def recompute_boundary(self):
        out = set()
        for v in self.members:
            for w in self.g.neighbors(v):
                if w not in self._mset:
                    out.add(w)
        return out

    def audit(self):
        if self.recompute_boundary() != set(self._blist) or len(self._blist) != len(self._bpos):
            raise DLAKitError("boundary audit failed: incremental boundary is inconsistent")
        return True

    def marks(self):
        if self._marks is None:
            self._marks = _marks_for(self.g, self.members + self._blist)
        return self._marks

    def copy(self):
        return Aggregate(self.g, self.members)

    def __repr__(self):
        return f"Aggregate({self.g.tag}, size={len(self)}, radius={self.radius})"


def init_aggregate(g: Graph) -> Aggregate:
    return Aggregate(g)


# ---------------------------------------------------------------------------
# sampling


def step_key(base_key: int, index: int) -> int:
    """Kernel key for attachment number ``index`` of a run keyed ``base_key``."""
    return counter_draw(base_key, index)


def _below(key, n):
    return ((counter_draw(key, 0) >> 32) * n) >> 32


def _attach_walk(agg: Aggregate, cfg: LaunchConfig, key: int, workers: int = 1,
                 launch_radius: int | None = None):
    marks = agg.marks()
    R, E = cfg.radii(agg.radius)
    if launch_radius is not None:
        R = launch_radius
        E = max(E, R + 1)
    # tree launches skip failed attempts geometrically from the block start,
    # so they always run as one sequential block
    if workers <= 1 or isinstance(marks, _TreeMarks):
        out = marks.out_buffer()
        status, j, _ = marks.attach(R, E, 0, cfg.max_retries, cfg.step_cap, key, out)
    else:
        # rounds of ``workers`` contiguous launch blocks; the lowest launch
        # index that ends the search wins, exactly as in the sequential loop
        block = 16
        status, out = K.ESCAPED, None
        first = 0
        with ThreadPoolExecutor(workers) as ex:
            while first < cfg.max_retries and out is None:
                jobs = []
                for w in range(workers):
                    a = first + w * block
                    n = min(block, cfg.max_retries - a)
                    if n <= 0:
                        break
                    buf = marks.out_buffer()
                    jobs.append((buf, ex.submit(marks.attach, R, E, a, n, cfg.step_cap, key, buf)))
                for buf, fut in jobs:
                    st, j, _ = fut.result()
                    if st != K.ESCAPED and out is None:
                        status, out = st, buf
                first += workers * block
        if out is None:
            out = marks.out_buffer()
    if status == K.BUDGET:
        raise BudgetError(f"walk exceeded step cap {cfg.step_cap} at t={agg.t}")
    if status != K.HIT:
        raise SamplingError(f"no hit after {cfg.max_retries} launches at t={agg.t} "
                            f"(R={R}, escape={E})")
    return marks.vertex(out)


def sample_attachment(g: Graph, agg: Aggregate, cfg: LaunchConfig | None = None, rng=0,
                      index: int | None = None, workers: int = 1,
                      launch_radius: int | None = None):
    """Draw the next attachment site from the harmonic measure of A u dA.

    The draw is keyed by ``(rng, index)``; ``index`` defaults to ``agg.t``.

    On the k-regular tree every boundary vertex has exactly one neighbour in
    A u dA, so its equilibrium mass is k - 2 and the harmonic measure of
    A u dA is uniform on dA.  The ``exact-tree`` sampler draws from that law
    directly; ``walk`` launches walkers.
    """
    cfg = cfg or LaunchConfig()
    if agg.g is not g and agg.g != g:
        raise DomainError("aggregate belongs to a different graph")
    rng = as_stream(rng)
    key = step_key(rng.kernel_key(), agg.t if index is None else index)
    return _sample(agg, cfg, key, workers, launch_radius)


def _sample(agg, cfg, key, workers=1, launch_radius=None):
    if cfg.resolved_sampler(agg.g) == "exact-tree":
        b = agg._blist
        return b[_below(key, len(b))]
    return _attach_walk(agg, cfg, key, workers, launch_radius)


def attachment_counts(g: Graph, agg: Aggregate, n: int, cfg: LaunchConfig | None = None,
                      rng=0, launch_radius: int | None = None) -> dict:
    """Empirical attachment law on a frozen aggregate from ``n`` independent draws."""
    cfg = cfg or LaunchConfig()
    base = as_stream(rng).kernel_key()
    counts = {}
    for i in range(n):
        v = _sample(agg, cfg, step_key(base, i), 1, launch_radius)
        counts[v] = counts.get(v, 0) + 1
    return counts


# ---------------------------------------------------------------------------
# persistence


def _dumps(obj):
    return json.dumps(obj, separators=(",", ":"), sort_keys=True)


class RecordSink:
    """JSON Lines step records ``{"t", "rad", "v"}`` preceded by one header line."""

    def __init__(self, target=None, header: dict | None = None, append: bool = False):
        self._own = False
        if target is None:
            self.fh = io.StringIO()
        elif isinstance(target, (str, os.PathLike)):
            self.fh = open(target, "a" if append else "w", encoding="utf-8", newline="\n")
            self._own = True
        else:
            self.fh = target
        if header is not None and not append:
            self.fh.write(_dumps({"header": header}) + "\n")

    def emit(self, t: int, rad: int, v):
        self.fh.write(_dumps({"t": t, "rad": rad, "v": list(v) if isinstance(v, tuple) else v}) + "\n")

    def flush(self):
        self.fh.flush()

    def close(self):
        self.fh.flush()
        if self._own:
            self.fh.close()

    def getvalue(self):
        return self.fh.getvalue()


def _vertex_json(v):
    return [int(x) for x in v]


def write_checkpoint(path, agg: Aggregate, rng: RandomStream, config: dict | None = None):
    data = {
        "config": config or {},
        "family": agg.g.tag,
        "seed": rng.seed,
        "rng": rng.state(),
        "t": agg.t,
        "members": [_vertex_json(v) for v in agg.members],
    }
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(_dumps(data) + "\n")
    os.replace(tmp, path)


def read_checkpoint(path, g: Graph):
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if data.get("family") != g.tag:
        raise DomainError(f"checkpoint is for {data.get('family')}, not {g.tag}")
    agg = Aggregate(g, [tuple(v) for v in data["members"]])
    if agg.t != data["t"]:
        raise DomainError("checkpoint member count does not match t")
    return agg, RandomStream.from_state(data["rng"]), data


def grow(g: Graph, agg: Aggregate, n: int, cfg: LaunchConfig | None = None, rng=0,
         sink: RecordSink | None = None, workers: int = 1, audit: bool = True,
         checkpoint: str | None = None, checkpoint_every: int = 0,
         checkpoint_config: dict | None = None) -> Aggregate:
    """Run ``n`` attachment steps in place and return the aggregate.

    Attachment ``t`` is keyed by ``(rng, t)``, so a run resumed from a
    checkpoint continues exactly as the uninterrupted run would.  The
    boundary is audited against a full recomputation at every power of two.
    On error the aggregate keeps all completed steps and the sink is flushed.
    """
    cfg = cfg or LaunchConfig()
    n = check_int(n, "n", 1)
    rng = as_stream(rng)
    base = rng.kernel_key()
    try:
        for _ in range(n):
            v = _sample(agg, cfg, step_key(base, agg.t), workers)
            agg.add(v)
            if sink is not None:
                sink.emit(agg.t, agg.radius, v)
            if audit and agg.t & (agg.t - 1) == 0:
                agg.audit()
            if checkpoint and checkpoint_every and agg.t % checkpoint_every == 0:
                if sink is not None:
                    sink.flush()
                write_checkpoint(checkpoint, agg, rng, checkpoint_config)
    finally:
        if sink is not None:
            sink.flush()
    return agg


def run_dla(g: Graph, particles: int, seed: int, cfg: LaunchConfig | None = None,
            workers: int = 1):
    """Grow from the root and return ``(aggregate, radii)``, radii[t] = rad(A_t)."""
    agg = init_aggregate(g)
    rng = RandomStream(seed)
    cfg = cfg or LaunchConfig()
    base = rng.kernel_key()
    radii = np.zeros(particles + 1, np.int64)
    for t in range(particles):
        agg.add(_sample(agg, cfg, step_key(base, t), workers))
        radii[t + 1] = agg.radius
        if agg.t & (agg.t - 1) == 0:
            agg.audit()
    return agg, radii


def launch_config_dict(cfg: LaunchConfig) -> dict:
    return asdict(cfg)
