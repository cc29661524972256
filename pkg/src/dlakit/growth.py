"""Radius records of DLA runs: first-passage times, exponent fits, envelope ratios."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from ._validation import check_int
from .bounds import EnvelopeSpec
from .errors import DomainError

CSV_COLUMNS = ("family", "seed", "alpha_hat", "stderr", "sup_ratio", "trend")


@dataclass
class GrowthRecord:
    """Radius time series ``rad[t]`` for t = t[0], t[1], ...

    Records built from a run start at t=0 with radius 0.
    """

    t: np.ndarray
    rad: np.ndarray
    seed: int | None = None
    family: str = ""
    config_hash: str = ""
    header: dict = field(default_factory=dict)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=np.int64)
        rad = np.asarray(self.rad)
        # synthetic curves may carry real-valued radii
        self.rad = rad.astype(np.int64) if rad.dtype.kind in "iub" else rad.astype(np.float64)
        if self.t.shape != self.rad.shape or self.t.ndim != 1:
            raise DomainError("t and rad must be 1-D arrays of equal length")

    def validate(self):
        if len(self.t) > 1:
            if np.any(np.diff(self.t) <= 0):
                raise DomainError("t must be strictly increasing")
            step = np.diff(self.rad)
            if np.any(step < 0):
                raise DomainError("rad must be non-decreasing")
            if np.any(step[np.diff(self.t) == 1] > 1):
                raise DomainError("rad may grow by at most 1 per step")
        return self

    @classmethod
    def from_radii(cls, radii, **kw):
        radii = np.asarray(radii)
        return cls(np.arange(len(radii)), radii, **kw)

    def __len__(self):
        return len(self.t)

    def radius_at(self, t):
        i = np.searchsorted(self.t, t, side="right") - 1
        if np.any(i < 0):
            raise DomainError("t before the start of the record")
        return self.rad[i]


def read_jsonl(path_or_lines) -> GrowthRecord:
    """Parse a run file: optional header line, then ``{"t", "rad", "v"}`` records."""
    if isinstance(path_or_lines, (str, bytes)) and "\n" not in str(path_or_lines):
        with open(path_or_lines, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    else:
        lines = str(path_or_lines).splitlines() if isinstance(path_or_lines, str) else list(path_or_lines)
    header = {}
    ts, rs = [0], [0]
    for no, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DomainError(f"line {no}: invalid JSON ({exc.msg})") from exc
        if "header" in obj:
            header = obj["header"]
            continue
        try:
            ts.append(int(obj["t"]))
            rs.append(int(obj["rad"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise DomainError(f"line {no}: record needs integer 't' and 'rad'") from exc
    rec = GrowthRecord(np.array(ts), np.array(rs), seed=header.get("seed"),
                       family=header.get("family", ""), config_hash=header.get("config_hash", ""),
                       header=header)
    return rec.validate()


def first_passage(rec: GrowthRecord, r: int):
    """Smallest t with rad(A_t) >= r, or None."""
    r = check_int(r, "r", 0)
    hit = np.flatnonzero(rec.rad >= r)
    return int(rec.t[hit[0]]) if len(hit) else None


def first_passages(rec: GrowthRecord) -> dict:
    out = {}
    for r in range(int(rec.rad.max()) + 1 if len(rec) else 0):
        out[r] = first_passage(rec, r)
    return out


def geometric_grid(t_min: int, t_max: int, ratio: float = 1.05) -> np.ndarray:
    """Integers from t_min to t_max whose successive ratio is about ``ratio``."""
    if t_min < 1 or t_max < t_min:
        raise DomainError("need 1 <= t_min <= t_max")
    n = int(math.floor(math.log(t_max / t_min) / math.log(ratio))) + 1
    pts = np.rint(t_min * ratio ** np.arange(n)).astype(np.int64)
    pts = np.unique(np.append(pts[pts <= t_max], t_max))
    return pts


def _window(rec, t_min, t_max, ratio=1.05, min_points=20):
    lo, hi = int(rec.t[0]), int(rec.t[-1])
    if t_min < max(lo, 1) or t_max > hi or t_max <= t_min:
        raise DomainError(f"window [{t_min}, {t_max}] not inside record [{max(lo, 1)}, {hi}]")
    ts = geometric_grid(t_min, t_max, ratio)
    if len(ts) < min_points:
        raise DomainError(f"window gives {len(ts)} geometric samples, need >= {min_points}")
    return ts, rec.radius_at(ts).astype(np.float64)


def _ols(x, y):
    """Slope and its standard error."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    xm = x - x.mean()
    sxx = float(xm @ xm)
    if sxx == 0:
        raise DomainError("degenerate regression window")
    slope = float(xm @ (y - y.mean())) / sxx
    resid = y - y.mean() - slope * xm
    dof = len(x) - 2
    se = math.sqrt(float(resid @ resid) / dof / sxx) if dof > 0 else math.nan
    return slope, se


def fit_exponent(rec: GrowthRecord, t_min: int, t_max: int, ratio: float = 1.05):
    """Least-squares slope of log rad against log t on geometrically spaced
    times in [t_min, t_max].  Returns ``(alpha_hat, stderr)``."""
    ts, rs = _window(rec, t_min, t_max, ratio)
    if np.any(rs <= 0):
        raise DomainError("radius must be positive inside the fit window")
    return _ols(np.log(ts), np.log(rs))


def envelope_ratio(rec: GrowthRecord, env: EnvelopeSpec, t_min: int, t_max: int | None = None,
                   ratio: float = 1.05):
    """``(sup_ratio, argmax_t, trend)`` for rad(t) / f(t) over t >= t_min.

    sup is over every recorded t in the window; the trend is the slope of
    log(rad/f) against log t on the geometric grid (<= 0 means the ratio
    is not growing).
    """
    if t_min < 2:
        raise DomainError("t_min must be >= 2")
    t_max = int(rec.t[-1]) if t_max is None else t_max
    mask = (rec.t >= t_min) & (rec.t <= t_max)
    if not mask.any():
        raise DomainError("no record entries in the window")
    tt = rec.t[mask]
    q = rec.rad[mask] / np.asarray(env(tt), dtype=np.float64)
    i = int(np.argmax(q))
    ts, rs = _window(rec, t_min, t_max, ratio, min_points=3)
    with np.errstate(divide="ignore"):
        lq = np.log(rs / np.asarray(env(ts), dtype=np.float64))
    trend, _ = _ols(np.log(ts), lq)
    return float(q[i]), int(tt[i]), float(trend)


def tree_radius_floor(k: int, t: int) -> int:
    """Deterministic lower bound on rad(A_t) on the k-regular tree.

    A_t has t + 1 vertices and must fit in a ball around the root.
    """
    from .graphs import tree_ball_floor_radius

    return tree_ball_floor_radius(k, t + 1)


# ---------------------------------------------------------------------------
# writers


def summary_row(rec: GrowthRecord, env: EnvelopeSpec, t_min: int, t_max: int) -> dict:
    a, se = fit_exponent(rec, t_min, t_max)
    sup, _, trend = envelope_ratio(rec, env, t_min, t_max)
    return {"family": rec.family, "seed": rec.seed, "alpha_hat": a, "stderr": se,
            "sup_ratio": sup, "trend": trend}


def write_summary_csv(rows: Iterable[dict], fh=None) -> str:
    buf = io.StringIO() if fh is None else fh
    w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: (repr(float(row[k])) if isinstance(row[k], float) else row[k])
                    for k in CSV_COLUMNS})
    return buf.getvalue() if fh is None else ""


def write_dat(rec: GrowthRecord, fh=None, ts=None) -> str:
    """Two columns ``t rad`` for gnuplot."""
    ts = rec.t if ts is None else np.asarray(ts)
    rs = rec.radius_at(ts)
    body = "".join(f"{int(a)} {int(b)}\n" for a, b in zip(ts, rs))
    text = "# t rad\n" + body
    if fh is not None:
        fh.write(text)
    return text
