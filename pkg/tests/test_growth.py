import io
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dlakit.bounds import EnvelopeSpec, envelope
from dlakit.dla import RecordSink, grow, init_aggregate, run_dla
from dlakit.errors import DomainError
from dlakit.graphs import Lattice, RegularTree
from dlakit.growth import (GrowthRecord, envelope_ratio, first_passage, first_passages,
                           fit_exponent, geometric_grid, read_jsonl, summary_row,
                           tree_radius_floor, write_dat, write_summary_csv)


def synthetic(f, t_max=100_000):
    t = np.arange(t_max + 1)
    return GrowthRecord(t, f(np.maximum(t, 1).astype(float)))


# --- first passage -----------------------------------------------------------------

def test_first_passage_examples():
    _, radii = run_dla(Lattice(3), 50, 1)
    rec = GrowthRecord.from_radii(radii)
    assert first_passage(rec, 0) == 0
    assert first_passage(rec, 1) == 1
    assert first_passage(rec, 10**6) is None
    sq = GrowthRecord.from_radii(np.floor(np.sqrt(np.arange(10_001))).astype(np.int64))
    for r in range(0, 101):
        assert first_passage(sq, r) == r * r


@given(st.lists(st.integers(0, 1), min_size=1, max_size=300), st.integers(0, 40), st.integers(0, 300))
@settings(max_examples=100, deadline=None)
def test_passage_duality(steps, r, s):
    rad = np.concatenate([[0], np.cumsum(steps)])
    rec = GrowthRecord.from_radii(rad)
    s = min(s, len(rad) - 1)
    tau = first_passage(rec, r)
    assert (tau is not None and tau <= s) == (rad[s] >= r)
    fp = first_passages(rec)
    assert all(first_passage(rec, k) == v for k, v in fp.items())


# --- exponent fits -------------------------------------------------------------------

def test_fit_exact_power_law():
    a, se = fit_exponent(synthetic(np.sqrt), 100, 100_000)
    assert a == pytest.approx(0.5, abs=1e-12)
    assert se < 1e-12
    a, _ = fit_exponent(synthetic(lambda t: 0 * t + 7.0), 100, 100_000)
    assert a == pytest.approx(0.0, abs=1e-12)


@given(st.floats(0.05, 1.5), st.floats(0.1, 100))
@settings(max_examples=50, deadline=None)
def test_fit_recovers_power_laws(alpha, c):
    a, _ = fit_exponent(synthetic(lambda t: c * t**alpha, 50_000), 10, 50_000)
    assert a == pytest.approx(alpha, abs=1e-12)


def test_fit_sqrt_t_log_t():
    a, _ = fit_exponent(synthetic(lambda t: np.sqrt(t * np.log(t))), 1000, 100_000)
    assert 0.5 < a < 0.58


def test_fit_window_errors():
    rec = synthetic(np.sqrt, 1000)
    with pytest.raises(DomainError):
        fit_exponent(rec, 900, 1000)
    with pytest.raises(DomainError):
        fit_exponent(rec, 10, 5000)
    with pytest.raises(DomainError):
        envelope_ratio(rec, envelope("lattice_3"), 1)


def test_geometric_grid():
    g = geometric_grid(100, 1000)
    assert g[0] == 100 and g[-1] == 1000
    assert np.all(np.diff(g) > 0)


# --- envelope ratios ------------------------------------------------------------------

def test_envelope_ratio_identity_and_detector():
    env = envelope("lattice_3")
    rec = GrowthRecord(np.arange(2, 10_001), env(np.arange(2, 10_001)))
    sup, _, trend = envelope_ratio(rec, env, 10)
    assert sup == pytest.approx(1.0, abs=1e-12)
    assert trend == pytest.approx(0.0, abs=1e-12)
    lin = GrowthRecord(np.arange(2, 10_001), np.arange(2, 10_001))
    _, _, trend = envelope_ratio(lin, envelope("tree_3"), 10)
    assert trend > 0.5


@given(st.floats(1e-3, 1e3))
@settings(max_examples=30, deadline=None)
def test_envelope_ratio_scale_invariance(c):
    _, radii = run_dla(Lattice(3), 400, 2)
    rec = GrowthRecord.from_radii(radii)
    env = envelope("lattice_3")
    scaled = EnvelopeSpec("scaled", lambda t: c * env.f(t))
    s1, a1, tr1 = envelope_ratio(rec, env, 10)
    s2, a2, tr2 = envelope_ratio(rec, scaled, 10)
    assert s2 == pytest.approx(s1 / c, rel=1e-12)
    assert a1 == a2
    assert tr2 == pytest.approx(tr1, abs=1e-12)


def test_lattice_run_trend_small():
    _, radii = run_dla(Lattice(3), 20_000, 11)
    rec = GrowthRecord.from_radii(radii)
    _, _, trend = envelope_ratio(rec, envelope("lattice_3"), 1000, 20_000)
    assert trend <= 0.02


def test_tree_floor():
    assert tree_radius_floor(3, 0) == 0
    assert tree_radius_floor(3, 3) == 1
    assert tree_radius_floor(3, 4) == 2
    for k in (3, 4):
        for t in (1, 10, 100, 1000, 10**5):
            r = tree_radius_floor(k, t)
            # the ball of radius r - 1 is too small to hold t + 1 vertices
            ball = 1 + k * ((k - 1) ** (r - 1) - 1) // (k - 2) if r >= 1 else 0
            assert ball < t + 1
            assert r >= math.log(t * (k - 2) / k, k - 1) - 1


# --- records and writers ----------------------------------------------------------------

def test_jsonl_round_trip():
    sink = RecordSink(header={"seed": 4, "family": "z3", "config_hash": "abc"})
    grow(Lattice(3), init_aggregate(Lattice(3)), 100, rng=4, sink=sink)
    rec = read_jsonl(sink.getvalue())
    assert rec.seed == 4 and rec.family == "z3" and rec.config_hash == "abc"
    _, radii = run_dla(Lattice(3), 100, 4)
    assert np.array_equal(rec.rad, radii)


def test_jsonl_errors():
    with pytest.raises(DomainError):
        read_jsonl('{"t": 1}\n{"t": 2, "rad": 1}\n')
    with pytest.raises(DomainError):
        read_jsonl('{"t": 1, "rad": 3}\n{"t": 2, "rad": 4}\n')
    with pytest.raises(DomainError):
        read_jsonl("not json\n\n")


def test_record_validation():
    with pytest.raises(DomainError):
        GrowthRecord([0, 1], [0])
    with pytest.raises(DomainError):
        GrowthRecord([0, 1, 2], [0, 1, 0]).validate()


def test_csv_and_dat():
    _, radii = run_dla(RegularTree(3), 2000, 3)
    rec = GrowthRecord.from_radii(radii, seed=3, family="tree3")
    row = summary_row(rec, envelope("tree_3"), 100, 2000)
    text = write_summary_csv([row])
    lines = text.splitlines()
    assert lines[0] == "family,seed,alpha_hat,stderr,sup_ratio,trend"
    fields = lines[1].split(",")
    assert fields[:2] == ["tree3", "3"]
    assert float(fields[2]) == row["alpha_hat"]
    buf = io.StringIO()
    write_dat(rec, buf, ts=[1, 10, 100])
    out = buf.getvalue().splitlines()
    assert out[0].startswith("#")
    assert [int(x.split()[0]) for x in out[1:]] == [1, 10, 100]
    assert json.dumps(row)
