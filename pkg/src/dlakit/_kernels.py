"""Compiled random-walk kernels.

Each kernel walks until it enters a marked target set (``HIT``), passes the
escape radius (``ESCAPED``) or exhausts its step cap (``BUDGET``).
Randomness comes from ``rng._draw(key, counter)``; every launch of an
attachment sampler gets its own key ``_subkey(key, j)`` and restarts its
counter at zero, so launch ``j`` is the same whether it runs alone, in a
batch, or on another thread.
"""

import numpy as np
from numba import njit

from .rng import _below, _draw, _uniform

HIT = 0
ESCAPED = 1
BUDGET = 2

_SALT = np.uint64(0xD1B54A32D192ED03)


@njit(cache=True, nogil=True, inline="always")
def _subkey(key, j):
    return _draw(np.uint64(key) ^ _SALT, j)


# ---------------------------------------------------------------------------
# grid families (lattice / carpet)


@njit(cache=True, nogil=True, inline="always")
def _carpet_ok(pos, tab):
    for i in range(pos.shape[0]):
        if pos[i] < 0:
            return False
    common = np.int64(-1)
    for i in range(pos.shape[0]):
        c = pos[i]
        if c < tab.shape[0]:
            m = tab[c]
        else:
            m = np.int64(0)
            p = 0
            while c > 0:
                if c % 3 == 1:
                    m |= np.int64(1) << p
                c //= 3
                p += 1
        common &= m
        if common == 0:
            return True
    return common == 0


@njit(cache=True, nogil=True, inline="always")
def _grid_mark(pos, grid, glo, gshape, gstride):
    idx = 0
    for i in range(pos.shape[0]):
        r = pos[i] - glo[i]
        if r < 0 or r >= gshape[i]:
            return 0
        idx += r * gstride[i]
    return grid[idx]


@njit(cache=True, nogil=True)
def grid_walk(pos, grid, glo, gshape, gstride, escape_radius, step_cap,
              key, carpet, tab):
    """Walk in place from ``pos``; returns (status, steps, draws)."""
    d = pos.shape[0]
    ctr = np.uint64(0)
    steps = 0
    cand = np.empty(2 * d, np.int64)
    if _grid_mark(pos, grid, glo, gshape, gstride) > 0:
        return HIT, 0, ctr
    while True:
        if steps >= step_cap:
            return BUDGET, steps, ctr
        if carpet:
            nc = 0
            for i in range(d):
                for s in (1, -1):
                    pos[i] += s
                    if _carpet_ok(pos, tab):
                        cand[nc] = 2 * i + (0 if s == 1 else 1)
                        nc += 1
                    pos[i] -= s
            c = cand[_below(key, ctr, nc)]
        else:
            c = _below(key, ctr, 2 * d)
        ctr += np.uint64(1)
        if c & 1:
            pos[c >> 1] -= 1
        else:
            pos[c >> 1] += 1
        steps += 1
        if _grid_mark(pos, grid, glo, gshape, gstride) > 0:
            return HIT, steps, ctr
        norm = 0
        for i in range(d):
            norm += abs(pos[i])
        if norm > escape_radius:
            return ESCAPED, steps, ctr


@njit(cache=True, nogil=True)
def _sphere_point(out, radius, key, ctr, orthant):
    """Uniform lattice point with |x|_1 == radius (first orthant if asked)."""
    d = out.shape[0]
    bars = np.empty(d + 1, np.int64)
    while True:
        # uniform composition of radius into d non-negative parts
        slots = radius + d - 1
        bars[0] = -1
        ok = True
        for i in range(1, d):
            bars[i] = _below(key, ctr, slots)
            ctr += np.uint64(1)
        bars[d] = slots
        srt = np.sort(bars[1:d])
        for i in range(d - 1):
            bars[i + 1] = srt[i]
        for i in range(1, d - 1):
            if bars[i] == bars[i + 1]:
                ok = False
        if not ok:
            continue
        nz = 0
        for i in range(d):
            out[i] = bars[i + 1] - bars[i] - 1
            if out[i] != 0:
                nz += 1
        if orthant:
            return ctr
        # random signs; keep with probability 2^(nz - d) so points are uniform
        for i in range(d):
            if _below(key, ctr, 2) == 1:
                out[i] = -out[i]
            ctr += np.uint64(1)
        keep = True
        for i in range(d - nz):
            if _below(key, ctr, 2) == 1:
                keep = False
            ctr += np.uint64(1)
        if keep:
            return ctr


@njit(cache=True, nogil=True)
def grid_sphere_sample(out, radius, key, carpet, tab):
    ctr = np.uint64(0)
    while True:
        ctr = _sphere_point(out, radius, key, ctr, carpet)
        if not carpet or _carpet_ok(out, tab):
            return ctr


@njit(cache=True, nogil=True)
def grid_attach(grid, glo, gshape, gstride, launch_radius, escape_radius,
                first_launch, max_launches, step_cap, key, carpet, tab, out):
    """Launch walkers until one hits the marked set.

    Returns (status, launch_index, steps).  ``out`` receives the hit vertex.
    """
    d = out.shape[0]
    start = np.empty(d, np.int64)
    for j in range(first_launch, first_launch + max_launches):
        k = _subkey(key, j)
        grid_sphere_sample(start, launch_radius, k, carpet, tab)
        wk = _draw(k, np.uint64(0xFFFFFFFF))
        status, steps, _ = grid_walk(start, grid, glo, gshape, gstride, escape_radius,
                                     step_cap, wk, carpet, tab)
        if status == HIT:
            for i in range(d):
                out[i] = start[i]
            return HIT, j, steps
        if status == BUDGET:
            return BUDGET, j, steps
    return ESCAPED, first_launch + max_launches - 1, 0


@njit(cache=True, nogil=True)
def grid_visits(start, targets_grid, glo, gshape, gstride, n_targets, cutoff,
                n_walks, key, first_walk, carpet, tab, counts, sq):
    """Visit counts to marked vertices (mark = target index + 1) over walks."""
    d = start.shape[0]
    pos = np.empty(d, np.int64)
    cand = np.empty(2 * d, np.int64)
    per = np.zeros(n_targets, np.float64)
    for w in range(first_walk, first_walk + n_walks):
        k = _subkey(key, w)
        ctr = np.uint64(0)
        for i in range(d):
            pos[i] = start[i]
        per[:] = 0.0
        for t in range(cutoff + 1):
            m = _grid_mark(pos, targets_grid, glo, gshape, gstride)
            if m > 0:
                per[m - 1] += 1.0
            if t == cutoff:
                break
            if carpet:
                nc = 0
                for i in range(d):
                    for s in (1, -1):
                        pos[i] += s
                        if _carpet_ok(pos, tab):
                            cand[nc] = 2 * i + (0 if s == 1 else 1)
                            nc += 1
                        pos[i] -= s
                c = cand[_below(k, ctr, nc)]
            else:
                c = _below(k, ctr, 2 * d)
            ctr += np.uint64(1)
            if c & 1:
                pos[c >> 1] -= 1
            else:
                pos[c >> 1] += 1
        for i in range(n_targets):
            counts[i] += per[i]
            sq[i] += per[i] * per[i]


# ---------------------------------------------------------------------------
# regular tree (vertices encoded as (depth, code), code = base-k digits)


@njit(cache=True, nogil=True, inline="always")
def _tree_key(depth, code):
    return code * np.int64(64) + depth


@njit(cache=True, nogil=True, inline="always")
def _in_sorted(keys, x):
    i = np.searchsorted(keys, x)
    return i < keys.shape[0] and keys[i] == x


@njit(cache=True, nogil=True)
def _return_prob(k, gap, span):
    """P(depth walk drops ``gap`` levels before rising ``span - gap``)."""
    rho = 1.0 / (k - 1)
    return (rho ** gap - rho ** span) / (1.0 - rho ** span)


@njit(cache=True, nogil=True)
def tree_walk(state, keys, top, k, escape_radius, step_cap, key, ctr):
    """Walk on the k-regular tree from ``state = [depth, code]``.

    Vertices deeper than ``top`` (the deepest target) are never visited one
    by one: from depth ``h > top`` the walk either comes back to its
    ancestor at depth ``top`` or passes ``escape_radius``, with the
    gambler's-ruin probability of the depth process.  That is the exact law
    of the step-by-step walk.  Returns (status, moves, ctr).
    """
    steps = 0
    while True:
        depth = state[0]
        code = state[1]
        if depth > top:
            if depth > escape_radius:
                return ESCAPED, steps, ctr
            p = _return_prob(k, depth - top, escape_radius + 1 - top)
            u = _uniform(key, ctr)
            ctr += np.uint64(1)
            steps += 1
            if u >= p:
                return ESCAPED, steps, ctr
            for _ in range(depth - top):
                code //= k
            depth = top
            state[0] = depth
            state[1] = code
        if _in_sorted(keys, _tree_key(depth, code)):
            return HIT, steps, ctr
        if steps >= step_cap:
            return BUDGET, steps, ctr
        c = _below(key, ctr, k)
        ctr += np.uint64(1)
        steps += 1
        if depth == 0:
            state[0] = 1
            state[1] = c
        else:
            last = code % k
            if c == last:  # the parent
                state[0] = depth - 1
                state[1] = code // k
            else:
                state[0] = depth + 1
                state[1] = code * k + c


@njit(cache=True, nogil=True)
def tree_attach(keys, top, k, launch_radius, escape_radius, first_launch,
                max_launches, step_cap, key, out):
    """Launch from the depth-``launch_radius`` sphere until the target is hit.

    A launch reaches depth ``top`` with the gambler's-ruin probability, and
    when it does it arrives at a uniform vertex of that level.  Failed
    launches are skipped in one geometric draw, so the index of the next
    launch that reaches ``top`` costs O(1) however small that probability
    is.  Returns (status, launch_index, moves).
    """
    p_reach = _return_prob(k, launch_radius - top, escape_radius + 1 - top) \
        if launch_radius > top else 1.0
    log_miss = np.log1p(-p_reach) if p_reach < 1.0 else 0.0
    j = first_launch
    last = first_launch + max_launches
    while j < last:
        if p_reach < 1.0:
            # number of failed launches before the next one that reaches top
            u = _uniform(_subkey(key ^ np.uint64(0x5BD1E995), j), np.uint64(0))
            skip = np.floor(np.log1p(-u) / log_miss)
            if skip >= last - j:
                return ESCAPED, last - 1, 0
            j += np.int64(skip)
        kk = _subkey(key, j)
        ctr = np.uint64(1)
        depth = min(top, launch_radius)
        code = np.int64(0)
        prev = -1
        for i in range(depth):
            if i == 0:
                a = _below(kk, ctr, k)
            else:
                a = _below(kk, ctr, k - 1)
                if a >= prev:
                    a += 1
            ctr += np.uint64(1)
            code = code * k + a
            prev = a
        out[0] = depth
        out[1] = code
        status, steps, ctr = tree_walk(out, keys, top, k, escape_radius, step_cap, kk, ctr)
        if status == HIT:
            return HIT, j, steps
        if status == BUDGET:
            return BUDGET, j, steps
        j += 1
    return ESCAPED, last - 1, 0


# ---------------------------------------------------------------------------
# explicit graphs in CSR form (percolation clusters)


@njit(cache=True, nogil=True)
def csr_walk(state, indptr, indices, mark, dist_root, escape_radius, step_cap, key, ctr):
    v = state[0]
    steps = 0
    if mark[v] > 0:
        return HIT, 0, ctr
    while True:
        if steps >= step_cap:
            state[0] = v
            return BUDGET, steps, ctr
        lo = indptr[v]
        deg = indptr[v + 1] - lo
        v = indices[lo + _below(key, ctr, deg)]
        ctr += np.uint64(1)
        steps += 1
        if mark[v] > 0:
            state[0] = v
            return HIT, steps, ctr
        if dist_root[v] > escape_radius:
            state[0] = v
            return ESCAPED, steps, ctr


@njit(cache=True, nogil=True)
def csr_attach(indptr, indices, mark, dist_root, sphere, escape_radius,
               first_launch, max_launches, step_cap, key, out):
    for j in range(first_launch, first_launch + max_launches):
        kk = _subkey(key, j)
        ctr = np.uint64(0)
        out[0] = sphere[_below(kk, ctr, sphere.shape[0])]
        ctr += np.uint64(1)
        status, steps, ctr = csr_walk(out, indptr, indices, mark, dist_root,
                                      escape_radius, step_cap, kk, ctr)
        if status == HIT:
            return HIT, j, steps
        if status == BUDGET:
            return BUDGET, j, steps
    return ESCAPED, first_launch + max_launches - 1, 0


@njit(cache=True, nogil=True)
def csr_visits(start, indptr, indices, mark, n_targets, cutoff, n_walks, key,
               first_walk, counts, sq):
    per = np.zeros(n_targets, np.float64)
    for w in range(first_walk, first_walk + n_walks):
        kk = _subkey(key, w)
        ctr = np.uint64(0)
        v = start
        per[:] = 0.0
        for t in range(cutoff + 1):
            m = mark[v]
            if m > 0:
                per[m - 1] += 1.0
            if t == cutoff:
                break
            lo = indptr[v]
            v = indices[lo + _below(kk, ctr, indptr[v + 1] - lo)]
            ctr += np.uint64(1)
        for i in range(n_targets):
            counts[i] += per[i]
            sq[i] += per[i] * per[i]


@njit(cache=True, nogil=True)
def tree_visits(start, keys, k, maxd, cutoff, n_walks, key, first_walk, counts, sq):
    """Visit counts on the tree; ``keys`` sorted target keys (index = order)."""
    n_targets = keys.shape[0]
    per = np.zeros(n_targets, np.float64)
    for w in range(first_walk, first_walk + n_walks):
        kk = _subkey(key, w)
        ctr = np.uint64(0)
        depth = start[0]
        code = start[1]
        per[:] = 0.0
        for t in range(cutoff + 1):
            if depth < maxd:
                x = _tree_key(depth, code)
                i = np.searchsorted(keys, x)
                if i < n_targets and keys[i] == x:
                    per[i] += 1.0
            if t == cutoff:
                break
            c = _below(kk, ctr, k)
            ctr += np.uint64(1)
            if depth == 0:
                depth = 1
                code = c
            elif depth >= maxd:
                # far beyond any target; track depth only
                if c == 0:
                    depth -= 1
                else:
                    depth += 1
            else:
                if c == code % k:
                    depth -= 1
                    code //= k
                else:
                    depth += 1
                    if depth < maxd:
                        code = code * k + c
        for i in range(n_targets):
            counts[i] += per[i]
            sq[i] += per[i] * per[i]
