"""Command-line front end: simulate, fit, beurling, potential, bounds.

Exit codes: 0 ok, 1 runtime/sampling failure, 2 bad input/config/IO,
3 resource or step budget exceeded.  Errors are also written to stderr as
one JSON object.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor

import numpy as np

from . import __version__
from .beurling import beurling_report, pinched_phi
from .bounds import (PhiSpec, d_of_n, envelope, envelope_for_graph, fill_in_order_bound,
                     ld_tail_bound, parse_phi)
from .config import RunConfig, load_config, merge
from .dla import RecordSink, grow, init_aggregate, read_checkpoint, write_checkpoint
from .errors import DLAKitError, DomainError
from .graphs import format_vertex, parse_family, parse_vertex
from .growth import (envelope_ratio, read_jsonl, summary_row, write_dat,
                     write_summary_csv)
from .potential import (SolverConfig, capacity_sandwich_check, green_mc, heat_kernel_diag,
                        solve_escape)
from .rng import RandomStream


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise DomainError(f"arguments: {message}")


def _dump(obj):
    return json.dumps(obj, sort_keys=True, indent=1, default=_jsonable) + "\n"


def _jsonable(x):
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, tuple):
        return list(x)
    raise TypeError(type(x).__name__)


_HEADER: dict = {}


def _command_header(ns) -> dict:
    """Provenance for non-simulate outputs: every argument except output
    paths and the worker count enters the hash."""
    args = {k: v for k, v in sorted(vars(ns).items())
            if k not in ("func", "json", "csv", "dat", "workers")}
    text = json.dumps(args, sort_keys=True, default=str)
    return {"version": __version__, "command": ns.cmd, "seed": args.get("seed"),
            "config_hash": hashlib.sha256(text.encode()).hexdigest()[:16]}


def _write_json(path, obj):
    if path:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(_dump(dict(obj, header=_HEADER)))


def _parse_set(g, text):
    return [parse_vertex(g, part) for part in text.split(";")]


# ---------------------------------------------------------------------------
# simulate

_RUN_FLAGS = {
    "graph": str, "particles": int, "seed": int, "launch_factor": float, "launch_offset": int,
    "escape_factor": float, "max_retries": int, "step_cap": int, "sampler": str,
    "out": str, "checkpoint": str, "checkpoint_every": int, "workers": int,
}


def _checkpoint_path(cfg):
    return cfg.checkpoint or f"{cfg.out}.ckpt.json"


def _truncate_run_file(path, t, header):
    """Rewrite the header and keep the first ``t`` step records."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines(keepends=True)
    head = 1 if lines and lines[0].startswith('{"header"') else 0
    if len(lines) < head + t:
        raise DomainError(f"run file {path} has fewer than {t} records; cannot resume")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps({"header": header}, separators=(",", ":"), sort_keys=True) + "\n")
        fh.writelines(lines[head: head + t])


def run_simulation(cfg: RunConfig, resume: str | None = None, workers: int = 1):
    g = parse_family(cfg.graph)
    rng = RandomStream(cfg.seed)
    header = cfg.header()
    if resume:
        agg, rng_ck, data = read_checkpoint(resume, g)
        # the particle target may grow on resume; nothing else may change
        want = dict(cfg.result_dict(), particles=None)
        if dict(data.get("config", {}), particles=None) != want:
            raise DomainError("resume: checkpoint config differs from the requested run")
        if agg.t > cfg.particles:
            raise DomainError("particles: checkpoint is already past the requested count")
        rng = rng_ck
        _truncate_run_file(cfg.out, agg.t, header)
        sink = RecordSink(cfg.out, header, append=True)
    else:
        agg = init_aggregate(g)
        sink = RecordSink(cfg.out, header)
    ck = _checkpoint_path(cfg)
    try:
        left = cfg.particles - agg.t
        if left > 0:
            grow(g, agg, left, cfg.launch(), rng, sink, workers=workers, checkpoint=ck,
                 checkpoint_every=cfg.checkpoint_every, checkpoint_config=cfg.result_dict())
    finally:
        sink.close()
        write_checkpoint(ck, agg, rng, cfg.result_dict())
    return agg


def _run_one(args):
    cfg, workers = args
    agg = run_simulation(cfg, workers=workers)
    return cfg.seed, agg.t, agg.radius


def cmd_simulate(ns) -> int:
    base = load_config(ns.config) if ns.config else None
    over = {k: getattr(ns, k) for k in _RUN_FLAGS}
    cfg = merge(base, over)
    seeds = [int(s) for s in ns.seeds.split(",")] if ns.seeds else None
    if seeds:
        cfg = merge(cfg, {"seed": seeds[0]})
    cfg.validate()
    if not cfg.out:
        raise DomainError("out: an output path is required")
    if seeds and len(seeds) > 1:
        if "{seed}" not in cfg.out:
            raise DomainError("out: use a '{seed}' placeholder with several seeds")
        jobs = [(merge(cfg, {"seed": s, "out": cfg.out.format(seed=s),
                             "checkpoint": cfg.checkpoint.format(seed=s) if cfg.checkpoint else ""}), 1)
                for s in seeds]
        if cfg.workers > 1:
            with ProcessPoolExecutor(min(cfg.workers, len(jobs))) as ex:
                results = list(ex.map(_run_one, jobs))
        else:
            results = [_run_one(j) for j in jobs]
        for seed, t, rad in results:
            print(f"seed {seed}: particles {t} radius {rad}")
        return 0
    if "{seed}" in cfg.out:
        cfg = merge(cfg, {"out": cfg.out.format(seed=cfg.seed)})
    agg = run_simulation(cfg, resume=ns.resume, workers=cfg.workers)
    print(f"{cfg.graph} seed {cfg.seed}: particles {agg.t} radius {agg.radius} -> {cfg.out}")
    return 0


# ---------------------------------------------------------------------------
# fit


def _envelope_for(tag, rec):
    if tag:
        try:
            return envelope(tag)
        except DomainError:
            return envelope_for_graph(parse_family(tag))
    if rec.family:
        return envelope_for_graph(parse_family(rec.family))
    raise DomainError("envelope: give --envelope (record has no family)")


def cmd_fit(ns) -> int:
    rows, out = [], []
    if ns.workers > 1:
        with ThreadPoolExecutor(ns.workers) as ex:
            recs = list(ex.map(read_jsonl, ns.inputs))
    else:
        recs = [read_jsonl(p) for p in ns.inputs]
    for path, rec in zip(ns.inputs, recs):
        t_hi = int(rec.t[-1])
        if ns.window:
            try:
                a, b = (int(x) for x in ns.window.split(":"))
            except ValueError:
                raise DomainError(f"window: expected 'tmin:tmax', got {ns.window!r}") from None
        else:
            a, b = max(10, t_hi // 100), t_hi
        env = _envelope_for(ns.envelope, rec)
        row = summary_row(rec, env, a, b)
        sup, argmax, trend = envelope_ratio(rec, env, a, b)
        rows.append(row)
        out.append(dict(row, file=path, t_min=a, t_max=b, argmax_t=argmax, envelope=env.source))
        print(f"{path}: alpha {row['alpha_hat']:.6f} +- {row['stderr']:.6f}  "
              f"sup_ratio {sup:.6f} at t={argmax}  trend {trend:+.6f}  [{env.source}]")
        if ns.dat:
            dat = ns.dat.format(seed=rec.seed) if "{seed}" in ns.dat else ns.dat
            with open(dat, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(f"# dlakit {__version__} config_hash {rec.config_hash} seed {rec.seed}\n")
                write_dat(rec, fh)
    if ns.csv:
        with open(ns.csv, "w", encoding="utf-8", newline="\n") as fh:
            write_summary_csv(rows, fh)
    _write_json(ns.json, {"fits": out})
    return 0


# ---------------------------------------------------------------------------
# beurling


def _phi_arg(text, default):
    if not text:
        return default
    if text == "pinched":
        return pinched_phi()
    return parse_phi(text)


def cmd_beurling(ns) -> int:
    g = parse_family(ns.graph)
    pv = _phi_arg(ns.phi_volume, PhiSpec("volume_power", 1.0, 1 / 3))
    pr = _phi_arg(ns.phi_radius, PhiSpec("radius_power", 1.0, 1 / 3))
    cfg = SolverConfig(box_radius=ns.box_radius, center="root")
    rep = beurling_report(g, ns.max_size, pv, pr, cfg, method=ns.method,
                          box_radius=ns.green_radius, workers=ns.workers)
    print(rep.table())
    if ns.json:
        with open(ns.json, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(_dump(dict(rep.to_dict(), header=_HEADER)))
    return 0


# ---------------------------------------------------------------------------
# potential


def _solver_cfg(ns):
    return SolverConfig(ns.box_radius, ns.refine_factor, ns.rel_tol, ns.max_refinements, ns.center)


def cmd_potential(ns) -> int:
    g = parse_family(ns.graph)
    what = ns.quantity
    if what in ("cap", "harmonic"):
        res = solve_escape(g, _parse_set(g, ns.set), _solver_cfg(ns))
        data = {"capacity": res.capacity, "converged": res.converged,
                "achieved_rel_delta": res.achieved_rel_delta, "box_radii": res.box_radii,
                "escape_prob": {format_vertex(v): p for v, p in res.escape_prob.items()},
                "harmonic": {format_vertex(v): p for v, p in res.harmonic.items()}}
        if what == "cap":
            print(f"capacity {res.capacity:.9f}  converged {res.converged}  "
                  f"rel_delta {res.achieved_rel_delta:.3e}")
        else:
            for v, h in res.harmonic.items():
                print(f"{format_vertex(v):>16} {h:.9f}")
    elif what == "sandwich":
        rep = capacity_sandwich_check(g, _parse_set(g, ns.set), _solver_cfg(ns))
        data = rep.__dict__
        print(f"lower {rep.lower:.9f}  middle {rep.middle:.9f}  upper {rep.upper:.9f}  holds {rep.holds}")
    elif what == "green":
        if ns.seed is None:
            raise DomainError("seed: a seed is mandatory")
        x = parse_vertex(g, ns.x)
        ys = _parse_set(g, ns.y)
        est = green_mc(g, x, ys, ns.walks, ns.cutoff, RandomStream(ns.seed), workers=ns.workers)
        data = {"x": format_vertex(x), "y": [format_vertex(y) for y in ys],
                "value": est.value, "stderr": est.stderr, "n_walks": est.n_walks,
                "cutoff": est.cutoff, "seed": ns.seed}
        for y, v, s in zip(ys, np.atleast_1d(est.value), np.atleast_1d(est.stderr)):
            print(f"g({format_vertex(x)}, {format_vertex(y)}) = {v:.6f} +- {s:.6f}")
    elif what == "heat":
        o = parse_vertex(g, ns.x)
        p = heat_kernel_diag(g, o, ns.t_max, lazy=ns.lazy)
        data = {"o": format_vertex(o), "lazy": ns.lazy, "p": p}
        for t, v in enumerate(p):
            print(f"{t} {float(v)!r}")
    else:  # pragma: no cover - argparse restricts choices
        raise DomainError(f"unknown quantity {what}")
    _write_json(ns.json, data)
    return 0


# ---------------------------------------------------------------------------
# bounds


def _family_to_envelope_tag(text):
    try:
        return envelope(text)
    except DomainError:
        return envelope_for_graph(parse_family(text)) if not text.startswith("perc") else \
            envelope(f"perc_{text.split(':')[1]}")


def cmd_bounds(ns) -> int:
    data = {}
    if ns.family:
        env = _family_to_envelope_tag(ns.family)
        data["envelope"] = {"family": env.family_tag, "source": env.source,
                            "exponent": env.exponent, "d_n": env.d_n}
        print(f"envelope {env.family_tag}: {env.source}")
        if env.exponent is not None:
            print(f"beta = {env.exponent:.6f}")
        if env.d_n is not None:
            print(f"d(n) = {env.d_n:.6f}")
        if ns.t:
            ts = [int(x) for x in ns.t.split(",")]
            data["f"] = {str(t): env(t) for t in ts}
            for t in ts:
                print(f"f({t}) = {env(t):.6f}")
    if ns.d_of_n:
        data["d_of_n"] = d_of_n(ns.d_of_n)
        print(f"d({ns.d_of_n}) = {data['d_of_n']:.12f}")
    if ns.tail:
        eb, c = (float(x) for x in ns.tail.split(","))
        data["ld_tail_bound"] = ld_tail_bound(eb, c)
        print(f"ld_tail_bound(EB={eb:g}, C={c:g}) = {data['ld_tail_bound']:.6e}")
    if ns.fill:
        parts = [int(x) for x in ns.fill.split(",")]
        if len(parts) not in (4, 5):
            raise DomainError("fill: expected D,s,t,n[,rad_s]")
        phi = _phi_arg(ns.phi, PhiSpec("volume_inverse"))
        D, s, t, n = parts[:4]
        rad = parts[4] if len(parts) == 5 else None
        raw = fill_in_order_bound(D, phi, s, t, n, rad, raw=True)
        data["fill_in_order"] = {"raw": raw, "clamped": min(1.0, raw), "phi": phi.label()}
        print(f"fill_in_order_bound = {min(1.0, raw):.6e} (raw {raw:.6e})")
    if not data:
        raise DomainError("bounds: give --family, --d-of-n, --tail or --fill")
    _write_json(ns.json, data)
    return 0


# ---------------------------------------------------------------------------


def build_parser():
    p = _Parser(prog="dlakit", description="DLA on graphs: simulation and potential theory")
    p.add_argument("--version", action="version", version=f"dlakit {__version__}")
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="grow an aggregate and stream JSON Lines records")
    s.add_argument("--config", help="flat 'key = value' file; flags override it")
    s.add_argument("--graph")
    s.add_argument("--particles", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--seeds", help="comma-separated seeds; --out needs a {seed} placeholder")
    s.add_argument("--out")
    s.add_argument("--launch-factor", dest="launch_factor", type=float)
    s.add_argument("--launch-offset", dest="launch_offset", type=int)
    s.add_argument("--escape-factor", dest="escape_factor", type=float)
    s.add_argument("--max-retries", dest="max_retries", type=int)
    s.add_argument("--step-cap", dest="step_cap", type=int)
    s.add_argument("--sampler", choices=["auto", "walk", "exact-tree"])
    s.add_argument("--checkpoint")
    s.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)
    s.add_argument("--resume", help="checkpoint file to continue from")
    s.add_argument("--workers", type=int)
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fit", help="exponent and envelope-ratio fits of run files")
    f.add_argument("--in", dest="inputs", nargs="+", required=True)
    f.add_argument("--window", help="tmin:tmax")
    f.add_argument("--envelope", help="envelope tag (default: from the run's graph)")
    f.add_argument("--csv")
    f.add_argument("--dat", help="gnuplot data file (may contain {seed})")
    f.add_argument("--workers", type=int, default=1, help="files read in parallel")
    f.add_argument("--json")
    f.set_defaults(func=cmd_fit)

    b = sub.add_parser("beurling", help="exhaustive Beurling-estimate report")
    b.add_argument("--graph", required=True)
    b.add_argument("--max-size", dest="max_size", type=int, default=6)
    b.add_argument("--phi-volume", dest="phi_volume", help="kind[:C[:alpha[:beta]]] or 'pinched'")
    b.add_argument("--phi-radius", dest="phi_radius")
    b.add_argument("--method", choices=["green", "solve"], default="green")
    b.add_argument("--box-radius", dest="box_radius", type=int, default=8)
    b.add_argument("--green-radius", dest="green_radius", type=int)
    b.add_argument("--workers", type=int, default=1)
    b.add_argument("--json")
    b.set_defaults(func=cmd_beurling)

    q = sub.add_parser("potential", help="capacity, harmonic measure, Green function, heat kernel")
    q.add_argument("quantity", choices=["cap", "harmonic", "green", "heat", "sandwich"])
    q.add_argument("--graph", required=True)
    q.add_argument("--set", default="root", help="vertices separated by ';'")
    q.add_argument("--x", default="root")
    q.add_argument("--y", default="root")
    q.add_argument("--walks", type=int, default=10000)
    q.add_argument("--cutoff", type=int, default=10000)
    q.add_argument("--seed", type=int)
    q.add_argument("--workers", type=int, default=1)
    q.add_argument("--t-max", dest="t_max", type=int, default=100)
    q.add_argument("--lazy", action="store_true")
    q.add_argument("--box-radius", dest="box_radius", type=int, default=8)
    q.add_argument("--refine-factor", dest="refine_factor", type=float, default=1.5)
    q.add_argument("--rel-tol", dest="rel_tol", type=float, default=1e-3)
    q.add_argument("--max-refinements", dest="max_refinements", type=int, default=5)
    q.add_argument("--center", choices=["set", "root"], default="set")
    q.add_argument("--json")
    q.set_defaults(func=cmd_potential)

    o = sub.add_parser("bounds", help="envelopes and bound formulas")
    o.add_argument("--family")
    o.add_argument("--t", help="comma-separated times at which to evaluate f")
    o.add_argument("--d-of-n", dest="d_of_n", type=int)
    o.add_argument("--tail", help="EB,C")
    o.add_argument("--fill", help="D,s,t,n[,rad_s]")
    o.add_argument("--phi")
    o.add_argument("--json")
    o.set_defaults(func=cmd_bounds)
    return p


def _report(kind, code, message, partial=None):
    err = {"error": kind, "exit_code": code, "message": message}
    if partial is not None:
        err["partial"] = partial
    sys.stderr.write(json.dumps(err, sort_keys=True) + "\n")
    return code


def main(argv=None) -> int:
    try:
        ns = build_parser().parse_args(argv)
        _HEADER.clear()
        _HEADER.update(_command_header(ns))
        return ns.func(ns)
    except DLAKitError as exc:
        return _report(exc.kind, exc.exit_code, str(exc), getattr(exc, "partial", None))
    except OSError as exc:
        return _report("io", 2, f"{exc.filename or ''}: {exc.strerror or exc}")
    except MemoryError:
        return _report("resource", 3, "out of memory")


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
