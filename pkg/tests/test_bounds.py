import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dlakit.bounds import (CARPET3_BETA, PhiSpec, d_of_n, envelope, envelope_for_graph,
                           fill_in_order_bound, i_phi, ld_tail_bound, parse_phi,
                           poisson_binomial_tail, tree_phi)
from dlakit.errors import DomainError
from dlakit.graphs import Carpet, Lattice, RegularTree

from oracles import poisson_binomial_tail_enum


# --- i_phi -------------------------------------------------------------------

def test_i_phi_examples():
    assert i_phi(PhiSpec("volume_inverse"), 1, 3) == pytest.approx(11 / 6, abs=1e-15)
    assert i_phi(PhiSpec("volume_power", 2.5, 1e-9), 1, 1) == pytest.approx(2.5)
    half = PhiSpec("volume_power", 1.0, 0.5)
    v = i_phi(half, 100, 10)
    assert v == pytest.approx(sum((100 + j) ** -0.5 for j in range(10)), rel=1e-14)
    assert v <= 1.0


def test_i_phi_rejects_radius_kind():
    with pytest.raises(DomainError):
        i_phi(PhiSpec("radius_power", 1.0, 0.5), 1, 2)


# --- tail bound ----------------------------------------------------------------

def test_ld_tail_examples():
    assert ld_tail_bound(3.7, math.e) == pytest.approx(1.0)
    assert ld_tail_bound(2, 2 * math.e) == pytest.approx(math.exp(-4 * math.e * math.log(2)))
    with pytest.raises(DomainError):
        ld_tail_bound(1.0, 1.0)


def test_poisson_binomial_examples():
    assert poisson_binomial_tail([0.5, 0.5], 1) == pytest.approx(0.75)
    assert poisson_binomial_tail([0.3], 1) == pytest.approx(0.3)
    assert poisson_binomial_tail([0.1, 0.2, 0.3], 2) == pytest.approx(0.098, abs=1e-12)
    assert poisson_binomial_tail_enum([0.1, 0.2, 0.3], 2) == pytest.approx(0.098, abs=1e-12)
    assert poisson_binomial_tail([0.2, 0.9], 0) == 1.0
    assert poisson_binomial_tail([0.2, 0.9], 3) == 0.0


@given(st.lists(st.floats(0, 1), min_size=1, max_size=10), st.floats(0, 11))
@settings(max_examples=200, deadline=None)
def test_poisson_binomial_matches_enumeration(ps, m):
    assert poisson_binomial_tail(ps, m) == pytest.approx(
        poisson_binomial_tail_enum(ps, math.ceil(m)), abs=1e-12)


def test_tail_bound_dominates_on_grid():
    grid = [0.1 * i for i in range(1, 10)]
    rng = np.random.default_rng(0)
    for _ in range(400):
        ps = list(rng.choice(grid, size=rng.integers(1, 11)))
        EB = sum(ps)
        for C in (1.05, 1.5, 2.0, math.e, 4.0, 8.0):
            assert poisson_binomial_tail(ps, C * EB) <= ld_tail_bound(EB, C) + 1e-12


# --- fill-in-order -------------------------------------------------------------

def test_fill_in_order_single_factor_by_hand():
    phi = PhiSpec("volume_inverse")
    D, s, t = 2, 4, 3
    mass = 1 / 4 + 1 / 5 + 1 / 6
    assert fill_in_order_bound(D, phi, s, t, 1, raw=True) == pytest.approx(s * D * math.e * mass)


def test_fill_in_order_small_argument_gives_exponential():
    phi = PhiSpec("volume_inverse")
    s, t = 1000, 2
    for n in range(1, 30):
        arg = 3 * math.e / n * i_phi(phi, s, t)
        if arg <= math.exp(-1):
            assert fill_in_order_bound(3, phi, s, t, n, raw=True) <= s * math.exp(-n) * (1 + 1e-12)


def test_fill_in_order_radius_kind_and_errors():
    phi = PhiSpec("radius_power", 1.0, 0.5)
    v = fill_in_order_bound(3, phi, 10, 2, 3, rad_s=4, raw=True)
    assert v == pytest.approx(10 * (3 * math.e / 3 * 0.5 * 2) ** 3)
    with pytest.raises(DomainError):
        fill_in_order_bound(3, phi, 10, 2, 3)
    with pytest.raises(DomainError):
        fill_in_order_bound(3, PhiSpec("volume_inverse"), 10, 2, 3, rad_s=1)
    with pytest.raises(DomainError):
        fill_in_order_bound(3, PhiSpec("volume_inverse"), 2, 2, 3)
    assert fill_in_order_bound(3, PhiSpec("volume_inverse"), 5, 50, 1) == 1.0


@given(st.integers(1, 6), st.integers(1, 60), st.integers(1, 40), st.integers(1, 40))
@settings(max_examples=150, deadline=None)
def test_fill_in_order_monotone(D, s, t, n):
    n = min(n, s)
    phi = PhiSpec("volume_power", 1.0, 0.5)
    v = fill_in_order_bound(D, phi, s, t, n, raw=True)
    assert fill_in_order_bound(D + 1, phi, s, t, n, raw=True) >= v
    assert fill_in_order_bound(D, phi, s, t + 1, n, raw=True) >= v
    # past the crossover (log argument below 1/e) larger n only helps
    if n < s and D * math.e / n * i_phi(phi, s, t) <= math.exp(-1):
        assert fill_in_order_bound(D, phi, s, t, n + 1, raw=True) <= v


# --- phi -----------------------------------------------------------------------

@given(st.sampled_from(["volume_power", "volume_inverse", "radius_power", "radius_log_over_r"]),
       st.floats(0.1, 10), st.floats(0.2, 1.0), st.floats(-3, 3))
@settings(max_examples=100, deadline=None)
def test_phi_non_increasing_past_three(kind, C, alpha, beta):
    if kind in ("volume_power", "volume_inverse") and beta > 0:
        # (log s)^beta s^-alpha decreases once log s > beta / alpha
        start = max(3, math.ceil(math.exp(beta / alpha)) + 1)
    else:
        start = 3
    phi = PhiSpec(kind, C, alpha, beta if kind.startswith("volume") else 0.0)
    xs = np.unique(np.geomspace(start, start * 1e5, 200).astype(np.int64))
    vals = [phi(int(x)) for x in xs]
    assert all(b <= a * (1 + 1e-12) for a, b in zip(vals, vals[1:]))
    assert vals[-1] > 0


def test_phi_parse_and_validation():
    p = parse_phi("volume_power:2:0.5:1")
    assert (p.kind, p.C, p.alpha, p.beta) == ("volume_power", 2.0, 0.5, 1.0)
    assert parse_phi("volume_inverse:3:2").beta == 2.0
    with pytest.raises(DomainError):
        parse_phi("cubic:1")
    with pytest.raises(DomainError):
        PhiSpec("volume_power", 1.0, 1.5)
    with pytest.raises(DomainError):
        PhiSpec("radius_power", -1.0)
    assert PhiSpec("radius_power", 2.0, 0.5)(0) == 2.0
    assert PhiSpec("volume_power", 1, 0.5, 1).uses_log_shift(2)


def test_tree_phi_capped():
    phi = tree_phi(3)
    assert phi(1) == phi(3) == 1.0
    assert phi(100) == pytest.approx(3 / 100)
    lam = 1 - 2 * math.sqrt(2) / 3
    # same C (lambda s)^-1 shape
    assert phi(50) * lam * 50 == pytest.approx(3 * lam)


# --- envelopes -----------------------------------------------------------------

def test_carpet3_exponent_identity():
    d3 = d_of_n(3)
    assert d3 == pytest.approx(math.log(26) / (math.log(26) - math.log(8)), rel=1e-15)
    assert 1 / (d3 - 1) == pytest.approx((math.log2(13) - 2) / 3, rel=1e-13)
    env = envelope("carpet_3")
    assert env.exponent == CARPET3_BETA
    assert env(1000.0) == pytest.approx(1000.0 ** CARPET3_BETA)
    assert env.d_n == pytest.approx(d3)


def test_lattice3_envelope():
    env = envelope("lattice_3")
    for t in (10, 100, 1e5):
        assert env(t) == pytest.approx(math.sqrt(t * math.log(t)))


def test_degree_four_envelopes_coincide():
    ts = np.geomspace(2, 1e7, 50)
    assert np.array_equal(envelope("carpet_4")(ts), envelope("lattice_4")(ts))
    assert np.allclose(envelope("carpet_4")(ts), np.sqrt(ts))


@pytest.mark.parametrize("tag", ["lattice_3", "lattice_5", "tree_3", "nonamenable", "pinched_exponential",
                                 "carpet_3", "carpet_4", "carpet_5", "perc_3", "lattice_3_volume",
                                 "superpolynomial"])
def test_envelopes_positive_non_decreasing(tag):
    ts = np.arange(2, 5000)
    f = envelope(tag)(ts)
    assert np.all(f > 0)
    assert np.all(np.diff(f) >= -1e-12 * f[1:])


def test_envelope_errors_and_graph_lookup():
    for bad in ("lattice_2", "carpet_2", "hex_3", "tree_2"):
        with pytest.raises(DomainError):
            envelope(bad)
    assert envelope_for_graph(Lattice(3)).family_tag == "lattice_3"
    assert envelope_for_graph(RegularTree(4)).family_tag == "tree_4"
    assert envelope_for_graph(Carpet(3)).family_tag == "carpet_3"


def test_d_of_n_exact_rational_check():
    # d(n) is a ratio of logs; check against high-precision evaluation
    from decimal import Decimal, getcontext
    getcontext().prec = 40
    for n in (2, 3, 4, 7):
        a = Decimal(3**n - 1).ln()
        b = Decimal(3 ** (n - 1) - 1).ln() if n > 1 else Decimal(0)
        assert d_of_n(n) == pytest.approx(float(a / (a - b)), rel=1e-14)
