"""Beurling functions, tail bounds and growth envelopes as evaluable formulas."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ._validation import check_int, check_probability, check_real
from .errors import DomainError

VOLUME_KINDS = ("volume_power", "volume_inverse")
RADIUS_KINDS = ("radius_power", "radius_log_over_r")


@dataclass(frozen=True)
class PhiSpec:
    """A Beurling function.

    kinds::

        volume_power       C (log s)^beta s^-alpha,  0 < alpha <= 1
        volume_inverse     C (log s)^beta s^-1
        radius_power       C r^-alpha
        radius_log_over_r  C log(r) r^-1

    For tiny arguments where ``log`` is zero or negative (s or r below 3)
    the logarithm is replaced by ``log(x + 2)``; :meth:`uses_log_shift`
    reports when that happened.  Radius kinds are evaluated at
    ``max(r, 1)`` so the singleton (radius 0) is finite.  ``ceiling``
    optionally caps the value (harmonic measure never exceeds 1).
    """

    kind: str
    C: float = 1.0
    alpha: float = 1.0
    beta: float = 0.0
    ceiling: float | None = None

    def __post_init__(self):
        if self.kind not in VOLUME_KINDS + RADIUS_KINDS:
            raise DomainError(f"unknown phi kind {self.kind!r}")
        check_real(self.C, "C", 0.0, low_open=True)
        if self.kind == "volume_inverse":
            object.__setattr__(self, "alpha", 1.0)
        if self.kind in ("volume_power", "radius_power"):
            check_real(self.alpha, "alpha", 0.0, 1.0, low_open=True)
        check_real(self.beta, "beta")

    @property
    def is_volume(self):
        return self.kind in VOLUME_KINDS

    def unit(self) -> "PhiSpec":
        return PhiSpec(self.kind, 1.0, self.alpha, self.beta, None)

    def uses_log_shift(self, x) -> bool:
        if self.kind == "radius_log_over_r":
            return max(x, 1) < 3
        return self.beta != 0 and self.is_volume and x < 3

    @staticmethod
    def _log(x):
        return math.log(x + 2) if x < 3 else math.log(x)

    def __call__(self, x) -> float:
        if self.is_volume:
            if x < 1:
                raise DomainError("volume phi needs s >= 1")
            v = self.C * x ** (-self.alpha)
            if self.beta:
                v *= self._log(x) ** self.beta
        else:
            if x < 0:
                raise DomainError("radius phi needs r >= 0")
            r = max(x, 1)
            if self.kind == "radius_power":
                v = self.C * r ** (-self.alpha)
            else:
                v = self.C * self._log(r) / r
        if self.ceiling is not None:
            v = min(v, self.ceiling)
        return float(v)

    def label(self):
        return f"{self.kind}(C={self.C:g},alpha={self.alpha:g},beta={self.beta:g})"


def tree_phi(k: int) -> PhiSpec:
    """phi(s) = min(1, k / ((k-2) s)) on the k-regular tree.

    A connected set of size s has s(k-2)+2 outgoing edges, each escaping
    with probability (k-2)/(k-1), so h_A(x) <= k / (s(k-2)+2).  This is
    the C (lambda s)^-1 form with C = k lambda / (k-2), lambda = 1 - 2 sqrt(k-1)/k.
    """
    k = check_int(k, "k", 3)
    return PhiSpec("volume_inverse", k / (k - 2), ceiling=1.0)


_PHI_RE = re.compile(r"^(volume_power|volume_inverse|radius_power|radius_log_over_r)"
                     r"(?::([^:]+))?(?::([^:]+))?(?::([^:]+))?$")


def parse_phi(text: str) -> PhiSpec:
    """``kind[:C[:alpha[:beta]]]``, for example ``volume_power:1:0.3333``."""
    m = _PHI_RE.match(text.strip())
    if not m:
        raise DomainError(f"cannot parse phi spec {text!r}")
    kind = m.group(1)
    vals = [float(x) for x in m.groups()[1:] if x is not None]
    names = ["C", "alpha", "beta"]
    if kind == "volume_inverse" and len(vals) >= 2:
        names = ["C", "beta"]
    return PhiSpec(kind, **dict(zip(names, vals)))


def i_phi(phi: PhiSpec, s: int, t: int) -> float:
    """I_phi(s, t) = sum_{j=0}^{t-1} phi(s + j)."""
    if not phi.is_volume:
        raise DomainError("i_phi needs a volume-kind phi")
    s = check_int(s, "s", 1)
    t = check_int(t, "t", 1)
    return math.fsum(phi(s + j) for j in range(t))


def ld_tail_bound(EB: float, C: float) -> float:
    """exp(-EB * C * log(C / e)): bound on P[B >= C * E[B]] for B a sum of
    independent Bernoulli variables."""
    EB = check_real(EB, "EB", 0.0)
    C = check_real(C, "C")
    if C <= 1:
        raise DomainError("C must exceed 1")
    return math.exp(-EB * C * (math.log(C) - 1.0))


def poisson_binomial_pmf(ps: Sequence[float]) -> np.ndarray:
    pmf = np.zeros(len(ps) + 1)
    pmf[0] = 1.0
    for i, p in enumerate(ps):
        p = check_probability(p, f"ps[{i}]")
        nxt = pmf * (1 - p)
        nxt[1:] += pmf[:-1] * p
        pmf = nxt
    return pmf


def poisson_binomial_tail(ps: Sequence[float], m) -> float:
    """Exact P[sum of Bernoulli(p_i) >= m]; non-integer ``m`` is rounded up."""
    pmf = poisson_binomial_pmf(ps)
    m = math.ceil(m)
    if m <= 0:
        return 1.0
    if m > len(ps):
        return 0.0
    return float(min(1.0, math.fsum(pmf[m:])))


def fill_in_order_bound(D: int, phi: PhiSpec, s: int, t: int, n: int,
                        rad_s: int | None = None, raw: bool = False) -> float:
    """Bound on the probability that some n vertices are filled in order
    during steps s+1..s+t.

    volume kind: s * ((D e / n) * I_phi(s, t))^n
    radius kind: s * ((D e / n) * phi(rad_s) * t)^n

    Returns the value clamped to [0, 1]; ``raw=True`` returns it unclamped.
    """
    D = check_int(D, "D", 1)
    s = check_int(s, "s", 1)
    t = check_int(t, "t", 1)
    n = check_int(n, "n", 1)
    if n > s:
        raise DomainError("need s >= n")
    if phi.is_volume:
        if rad_s is not None:
            raise DomainError("rad_s is only used with radius-kind phi")
        mass = i_phi(phi, s, t)
    else:
        if rad_s is None:
            raise DomainError("radius-kind phi needs rad_s")
        mass = phi(check_int(rad_s, "rad_s", 0)) * t
    arg = D * math.e / n * mass
    if arg <= 0:
        val = 0.0
    else:
        lv = math.log(s) + n * math.log(arg)
        val = math.inf if lv > 700 else math.exp(lv)
    return val if raw else min(1.0, val)


# ---------------------------------------------------------------------------
# envelopes


def d_of_n(n: int) -> float:
    """Walk dimension exponent of the n-dimensional pre-carpet heat kernel."""
    n = check_int(n, "n", 2)
    a = math.log(3**n - 1)
    b = math.log(3 ** (n - 1) - 1)
    val = a / (a - b)
    # guard: same value through log1p of the ratio
    alt = a / -math.log1p((3 ** (n - 1) - 1) / (3**n - 1) - 1)
    if abs(val - alt) > 1e-12 * val:
        raise ArithmeticError("d(n) evaluation lost precision")
    return val


CARPET3_BETA = (math.log2(13) - 2) / 3


def _safe_t(t):
    return np.maximum(np.asarray(t, dtype=np.float64), 2.0)


@dataclass(frozen=True)
class EnvelopeSpec:
    """Envelope f(t) for rad(A_t) on one family (shape only, constant free).

    ``f`` is evaluated at ``max(t, 2)`` so it stays positive.
    """

    family_tag: str
    f: Callable = field(repr=False, compare=False)
    source: str = ""
    exponent: float | None = None
    d_n: float | None = None

    def __call__(self, t):
        out = self.f(_safe_t(t))
        return float(out) if np.ndim(out) == 0 else out


_TAG_RE = re.compile(r"^(lattice|tree|carpet|perc)_?(\d+)$")


def envelope(family_tag: str, **params) -> EnvelopeSpec:
    """Envelope table.

    tags: ``lattice_<d>`` (d >= 3), ``lattice_3_volume``, ``tree_<k>``,
    ``nonamenable``, ``pinched_exponential``, ``carpet_<n>`` (n >= 3),
    ``perc_<d>``, ``superpolynomial`` (param ``eps``).
    """
    tag = family_tag.strip().lower()
    if tag == "lattice_3_volume":
        return EnvelopeSpec(tag, lambda t: t ** (2 / 3), "volume route t^(2/3)", 2 / 3)
    if tag in ("nonamenable", "tree"):
        return EnvelopeSpec(tag, np.log, "non-amenable: log t")
    if tag in ("pinched_exponential", "transitive_exponential"):
        return EnvelopeSpec(tag, lambda t: np.log(t) ** 4, "pinched exponential growth: (log t)^4")
    if tag == "superpolynomial":
        eps = check_real(params.get("eps", 0.1), "eps", 0.0, low_open=True)
        return EnvelopeSpec(tag, lambda t: t**eps, f"super-polynomial growth: t^{eps:g}", eps)
    m = _TAG_RE.match(tag)
    if not m:
        raise DomainError(f"unknown envelope family {family_tag!r}")
    kind, num = m.group(1), int(m.group(2))
    if kind in ("lattice", "perc"):
        if num < 3:
            raise DomainError("lattice/percolation envelopes need d >= 3")
        if num == 3:
            return EnvelopeSpec(tag, lambda t: np.sqrt(t * np.log(t)), "cubic growth: sqrt(t log t)", 0.5)
        return EnvelopeSpec(tag, lambda t: t ** (2 / num), f"degree-{num} growth: t^(2/{num})", 2 / num)
    if kind == "tree":
        if num < 3:
            raise DomainError("tree envelopes need k >= 3")
        return EnvelopeSpec(tag, np.log, "non-amenable: log t")
    if num < 3:
        raise DomainError("carpet envelopes need n >= 3")
    dn = d_of_n(num)
    if num == 3:
        b = CARPET3_BETA
        return EnvelopeSpec(tag, lambda t: t**b, "carpet n=3: t^((log2 13 - 2)/3)", b, dn)
    if num == 4:
        return EnvelopeSpec(tag, np.sqrt, "carpet n=4: t^(1/2)", 0.5, dn)
    e = 2 / (dn - 2)
    return EnvelopeSpec(tag, lambda t: t**e * np.log(t), f"carpet n={num}: t^(2/(d(n)-2)) log t", e, dn)


def envelope_for_graph(g) -> EnvelopeSpec:
    from .graphs import Carpet, Lattice, PercolationCluster, RegularTree

    if isinstance(g, RegularTree):
        return envelope(f"tree_{g.k}")
    if isinstance(g, Carpet):
        return envelope(f"carpet_{g.dim}")
    if isinstance(g, PercolationCluster):
        return envelope(f"perc_{g.dim}")
    if isinstance(g, Lattice):
        return envelope(f"lattice_{g.dim}")
    raise DomainError(f"no envelope for {g!r}")
