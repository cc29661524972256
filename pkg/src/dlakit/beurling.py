"""Exhaustive Beurling-estimate checks over small connected sets at the root."""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import islice
from typing import Iterator

import numpy as np

from ._validation import check_int
from .bounds import PhiSpec
from .errors import DomainError, ResourceError, SolverError
from .graphs import Graph, RegularTree, format_vertex
from .potential import KilledGreen, SolverConfig, solve_escape, tree_escape_exact


def enumerate_connected_sets(g: Graph, max_size: int, max_sets: int | None = None) -> Iterator[tuple]:
    """Every connected vertex set containing the root with at most ``max_size``
    vertices, each exactly once.

    Redelmeier's algorithm: a set is extended only by vertices from its
    untried frontier, and a vertex leaves the frontier for good once
    it has been tried, so no set is generated twice.  Sets come out in a
    deterministic depth-first order, each as a canonically sorted tuple.
    Exceeding ``max_sets`` raises ResourceError with the count produced so
    far in ``partial``.
    """
    max_size = check_int(max_size, "max_size", 1)
    root = g.root
    key = g.sort_key
    produced = 0
    # explicit stack of (members, untried frontier, seen) states
    stack = [([], [root], {root})]
    while stack:
        members, untried, seen = stack.pop()
        while untried:
            v = untried.pop()
            cur = members + [v]
            if max_sets is not None and produced >= max_sets:
                raise ResourceError(f"more than {max_sets} connected sets", partial=produced)
            produced += 1
            yield tuple(sorted(cur, key=key))
            if len(cur) < max_size:
                fresh = [w for w in sorted(g.neighbors(v), key=key, reverse=True) if w not in seen]
                # resume the parent after the child subtree
                stack.append((members, list(untried), seen))
                stack.append((cur, untried + fresh, seen | set(fresh)))
                break


def count_connected_sets(g: Graph, max_size: int) -> dict:
    out = {}
    for A in enumerate_connected_sets(g, max_size):
        out[len(A)] = out.get(len(A), 0) + 1
    return out


def set_radius(g: Graph, A) -> int:
    return max(g.norm(v) for v in A)


@dataclass
class Worst:
    members: tuple
    sup_h: float
    ratio: float

    def as_json(self):
        return {"set": [format_vertex(v) for v in self.members], "sup_h": self.sup_h,
                "ratio": self.ratio}


@dataclass
class BeurlingReport:
    family: str
    max_size: int
    phi_volume: str
    phi_radius: str
    per_size_worst: dict
    per_radius_worst: dict
    fitted_C_volume: float
    fitted_C_radius: float
    n_sets: int
    n_failed: int
    box_radius: int
    method: str
    notes: list = field(default_factory=list)

    def to_dict(self):
        return {
            "family": self.family,
            "max_size": self.max_size,
            "phi_volume": self.phi_volume,
            "phi_radius": self.phi_radius,
            "per_size_worst": {str(k): w.as_json() for k, w in sorted(self.per_size_worst.items())},
            "per_radius_worst": {str(k): w.as_json() for k, w in sorted(self.per_radius_worst.items())},
            "fitted_C_volume": self.fitted_C_volume,
            "fitted_C_radius": self.fitted_C_radius,
            "n_sets": self.n_sets,
            "n_failed": self.n_failed,
            "box_radius": self.box_radius,
            "method": self.method,
            "notes": list(self.notes),
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    def table(self):
        lines = [f"family {self.family}  max_size {self.max_size}  sets {self.n_sets}"
                 f"  failed {self.n_failed}  box {self.box_radius} ({self.method})",
                 f"phi_volume {self.phi_volume}", f"phi_radius {self.phi_radius}",
                 f"{'size':>6} {'sup_h':>12} {'ratio':>12}  worst set"]
        for k, w in sorted(self.per_size_worst.items()):
            lines.append(f"{k:>6} {w.sup_h:>12.6f} {w.ratio:>12.6f}  "
                         + " ".join(format_vertex(v) for v in w.members))
        lines.append(f"{'radius':>6} {'sup_h':>12} {'ratio':>12}  worst set")
        for k, w in sorted(self.per_radius_worst.items()):
            lines.append(f"{k:>6} {w.sup_h:>12.6f} {w.ratio:>12.6f}  "
                         + " ".join(format_vertex(v) for v in w.members))
        lines.append(f"fitted C (volume) {self.fitted_C_volume:.6f}")
        lines.append(f"fitted C (radius) {self.fitted_C_radius:.6f}")
        lines.extend(f"note: {n}" for n in self.notes)
        return "\n".join(lines)


def default_beurling_radius(cfg: SolverConfig, max_size: int) -> int:
    return cfg.box_radius + max_size + 2


def beurling_report(g: Graph, max_size: int, phi_volume: PhiSpec, phi_radius: PhiSpec,
                    cfg: SolverConfig | None = None, method: str = "green",
                    box_radius: int | None = None, max_sets: int | None = 2_000_000,
                    workers: int = 1) -> BeurlingReport:
    """Worst harmonic-measure atom per size and per radius, with fitted constants.

    ``method="green"`` factorizes the Green function of the walk killed
    outside one root-centred ball (radius ``box_radius``) and gets every
    set's equilibrium measure from a |A| x |A| solve.  ``method="solve"``
    calls :func:`solve_escape` per set (slow, used as a cross-check).
    ``workers`` threads share the per-set solves; the report does not
    depend on it.
    """
    cfg = cfg or SolverConfig(center="root")
    if not phi_volume.is_volume or phi_radius.is_volume:
        raise DomainError("need a volume-kind and a radius-kind phi")
    if method not in ("green", "solve"):
        raise DomainError("method must be 'green' or 'solve'")
    R = box_radius or default_beurling_radius(cfg, max_size)
    # regular trees are solved exactly per set, no box needed
    tree = isinstance(g, RegularTree)
    kg = KilledGreen(g, R, max_size - 1) if method == "green" and not tree else None
    pv, pr = phi_volume.unit(), phi_radius.unit()
    per_size, per_rad = {}, {}
    n_sets = n_failed = 0
    notes = []
    shifted = False
    def sup_of(A):
        try:
            if tree:
                e = tree_escape_exact(g, A)
            elif kg is not None:
                e = kg.equilibrium(A)
                if not np.all(np.isfinite(e)) or e.sum() <= 0:
                    raise SolverError("degenerate equilibrium measure")
            else:
                return solve_escape(g, A, cfg).sup_harmonic()
            return float(e.max() / e.sum())
        except (SolverError, np.linalg.LinAlgError):
            return None

    def results():
        # batches evaluated in parallel, consumed in enumeration order
        it = enumerate_connected_sets(g, max_size, max_sets)
        with ThreadPoolExecutor(max(1, workers)) as ex:
            while True:
                batch = list(islice(it, 2048))
                if not batch:
                    return
                yield from zip(batch, ex.map(sup_of, batch) if workers > 1 else map(sup_of, batch))

    for A, sup_h in results():
        n_sets += 1
        if sup_h is None:
            n_failed += 1
            continue
        if len(A) == 1:
            sup_h = 1.0
        s, r = len(A), set_radius(g, A)
        shifted |= pv.uses_log_shift(s) or pr.uses_log_shift(r)
        rv, rr = sup_h / pv(s), sup_h / pr(r)
        w = per_size.get(s)
        if w is None or rv > w.ratio:
            per_size[s] = Worst(A, sup_h, rv)
        w = per_rad.get(r)
        if w is None or rr > w.ratio:
            per_rad[r] = Worst(A, sup_h, rr)
    if tree:
        notes.append("regular tree: exact escape probabilities, box_radius unused")
    if shifted:
        notes.append("log(x+2) used in place of log(x) for arguments below 3")
    if phi_radius.kind != "radius_log_over_r" and 0 in per_rad:
        notes.append("radius phi evaluated at max(r, 1)")
    fv = max((w.ratio for w in per_size.values()), default=math.nan)
    fr = max((w.ratio for w in per_rad.values()), default=math.nan)
    return BeurlingReport(g.tag, max_size, phi_volume.label(), phi_radius.label(), per_size,
                          per_rad, fv, fr, n_sets, n_failed, R, method, notes)


def pinched_phi(C: float = 1.0) -> PhiSpec:
    """phi(s) = C (log s)^3 / s.

    The printed statement for pinched exponential growth reads
    C s (log s)^-3, which increases in s and cannot bound harmonic measure;
    the capacity estimate cap(A) >= |A| (log |A|)^-3 behind it gives this
    form instead.
    """
    return PhiSpec("volume_inverse", C, beta=3.0)
