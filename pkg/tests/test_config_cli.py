import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dlakit.cli import main
from dlakit.config import RunConfig, load_config, merge, parse_config_text
from dlakit.errors import DomainError
from dlakit.growth import read_jsonl, tree_radius_floor


def run(argv, capsys=None):
    code = main([str(a) for a in argv])
    out = capsys.readouterr() if capsys else None
    return code, out


# --- configuration ---------------------------------------------------------------

@given(st.builds(RunConfig, graph=st.sampled_from(["z3", "tree3", "carpet3", "perc:3:0.7:10:2"]),
                 particles=st.integers(1, 10**6), seed=st.one_of(st.none(), st.integers(0, 2**40)),
                 launch_factor=st.floats(2, 10), launch_offset=st.integers(2, 50),
                 escape_factor=st.floats(10.5, 40), rel_tol=st.floats(1e-9, 1e-1),
                 out=st.sampled_from(["", "a.jsonl", "runs/{seed}.jsonl"]),
                 workers=st.integers(1, 16)))
@settings(max_examples=80, deadline=None)
def test_config_round_trip(cfg):
    assert parse_config_text(cfg.to_text()) == cfg


def test_config_precedence(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("# comment\ngraph = tree3\nparticles = 50\nseed = 3\n\nlaunch-offset = 7\n")
    file_cfg = load_config(str(p))
    assert (file_cfg.graph, file_cfg.particles, file_cfg.launch_offset) == ("tree3", 50, 7)
    cfg = merge(file_cfg, {"particles": 80, "graph": None})
    assert (cfg.graph, cfg.particles, cfg.seed, cfg.escape_factor) == ("tree3", 80, 3, 4.0)


@pytest.mark.parametrize("text,key", [("bogus = 1\n", "bogus"), ("seed = 1\nseed = 2\n", "seed"),
                                      ("particles = many\n", "particles"), ("seed\n", "line 1")])
def test_config_errors_name_the_key(text, key):
    with pytest.raises(DomainError, match=key):
        parse_config_text(text)


def test_hash_ignores_non_result_keys():
    a = RunConfig(seed=1)
    assert a.config_hash() == merge(a, {"workers": 8, "out": "x", "checkpoint_every": 5}).config_hash()
    assert a.config_hash() != merge(a, {"seed": 2}).config_hash()
    with pytest.raises(DomainError, match="seed"):
        RunConfig().validate()


# --- simulate ----------------------------------------------------------------------

def test_simulate_records_and_header(tmp_path, capsys):
    out = tmp_path / "run.jsonl"
    code, _ = run(["simulate", "--graph", "z3", "--particles", 300, "--seed", 42, "--out", out], capsys)
    assert code == 0
    lines = out.read_text().splitlines()
    head = json.loads(lines[0])["header"]
    assert head["seed"] == 42 and head["family"] == "z3" and len(head["config_hash"]) == 16
    assert len(lines) == 301
    ck = json.loads((tmp_path / "run.jsonl.ckpt.json").read_text())
    assert ck["t"] == 300 and len(ck["members"]) == 301


def test_simulate_byte_identical_across_runs_and_workers(tmp_path, capsys):
    outs = []
    for i, w in enumerate((1, 1, 4)):
        p = tmp_path / f"r{i}.jsonl"
        assert run(["simulate", "--graph", "z3", "--particles", 400, "--seed", 5, "--out", p,
                    "--workers", w], capsys)[0] == 0
        outs.append(p.read_bytes())
    assert outs[0] == outs[1] == outs[2]


def test_simulate_resume_matches_uninterrupted(tmp_path, capsys):
    full = tmp_path / "full.jsonl"
    part = tmp_path / "part.jsonl"
    ck = tmp_path / "ck.json"
    run(["simulate", "--graph", "tree3", "--particles", 500, "--seed", 8, "--out", full], capsys)
    run(["simulate", "--graph", "tree3", "--particles", 300, "--seed", 8, "--out", part,
         "--checkpoint", ck, "--checkpoint-every", 100], capsys)
    code, _ = run(["simulate", "--graph", "tree3", "--particles", 500, "--seed", 8, "--out", part,
                   "--checkpoint", ck, "--resume", ck], capsys)
    assert code == 0
    assert part.read_bytes() == full.read_bytes()
    code, out = run(["simulate", "--graph", "tree3", "--particles", 600, "--seed", 9, "--out", part,
                     "--resume", ck], capsys)
    assert code == 2 and "resume" in out.err


def test_simulate_config_file_and_multi_seed(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("graph = carpet3\nparticles = 100\nseed = 1\n")
    pattern = str(tmp_path / "c{seed}.jsonl")
    code, out = run(["simulate", "--config", cfg, "--seeds", "1,2", "--out", pattern, "--workers", 2], capsys)
    assert code == 0 and "seed 2" in out.out
    single = tmp_path / "single.jsonl"
    run(["simulate", "--config", cfg, "--seed", 2, "--out", single], capsys)
    assert (tmp_path / "c2.jsonl").read_bytes() == single.read_bytes()


def test_tree_large_run_respects_floor(tmp_path, capsys):
    out = tmp_path / "t.jsonl"
    assert run(["simulate", "--graph", "tree3", "--particles", 100_000, "--seed", 1, "--out", out],
               capsys)[0] == 0
    rec = read_jsonl(str(out))
    assert len(rec.t) == 100_001
    assert rec.rad[-1] >= tree_radius_floor(3, 100_000)


@pytest.mark.parametrize("argv,code", [
    (["simulate", "--graph", "z3", "--particles", 5, "--out", "x.jsonl"], 2),      # no seed
    (["simulate", "--graph", "hex9", "--particles", 5, "--seed", 1, "--out", "x.jsonl"], 2),
    (["simulate", "--graph", "z3", "--particles", 5, "--seed", 1], 2),              # no output
    (["fit", "--in", "does-not-exist.jsonl"], 2),
    (["potential", "cap", "--graph", "z3", "--set", "1,2"], 2),
    (["bounds"], 2),
    (["frobnicate"], 2),
    (["simulate", "--graph", "z3", "--particles", 3, "--seed", 1, "--out", "x.jsonl",
      "--max-retries", 1, "--escape-factor", 2.01, "--launch-factor", 2, "--launch-offset", 60], 1),
    (["simulate", "--graph", "z3", "--particles", 3, "--seed", 1, "--out", "x.jsonl",
      "--step-cap", 1], 3),
])
def test_exit_codes(argv, code, tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    got, out = run(argv, capsys)
    assert got == code
    err = json.loads(out.err.strip().splitlines()[-1])
    assert err["exit_code"] == code and err["message"]


# --- fit / beurling / potential / bounds ---------------------------------------------

def _write_sqrt_run(path, n=20_000):
    rad = np.floor(np.sqrt(np.arange(n + 1))).astype(int)
    with open(path, "w") as fh:
        fh.write(json.dumps({"header": {"seed": 0, "family": "z3"}}) + "\n")
        for t in range(1, n + 1):
            fh.write(json.dumps({"t": t, "rad": int(rad[t]), "v": [0, 0, 0]}) + "\n")


def test_fit_on_sqrt_data(tmp_path, capsys):
    p = tmp_path / "sq.jsonl"
    _write_sqrt_run(p)
    js = tmp_path / "fit.json"
    csv = tmp_path / "fit.csv"
    code, _ = run(["fit", "--in", p, "--window", "1000:20000", "--json", js, "--csv", csv], capsys)
    assert code == 0
    fit = json.loads(js.read_text())["fits"][0]
    assert fit["alpha_hat"] == pytest.approx(0.5, abs=5e-3)
    assert csv.read_text().splitlines()[0] == "family,seed,alpha_hat,stderr,sup_ratio,trend"
    assert run(["fit", "--in", p, "--window", "1000-2000"], capsys)[0] == 2


def test_fit_and_beurling_identical_across_workers(tmp_path, capsys):
    runs = []
    for s in (1, 2):
        p = tmp_path / f"r{s}.jsonl"
        run(["simulate", "--graph", "z3", "--particles", 3000, "--seed", s, "--out", p], capsys)
        runs.append(p)
    blobs = []
    for w in (1, 4, 1):
        js, csv, dat = (tmp_path / f"o{w}.{e}" for e in ("json", "csv", "dat"))
        assert run(["fit", "--in", *runs, "--csv", csv, "--json", js, "--workers", w], capsys)[0] == 0
        bj = tmp_path / f"b{w}.json"
        assert run(["beurling", "--graph", "z3", "--max-size", 4, "--json", bj, "--workers", w],
                   capsys)[0] == 0
        blobs.append((js.read_bytes(), csv.read_bytes(), bj.read_bytes()))
    assert blobs[0] == blobs[1] == blobs[2]


def test_beurling_cli_report(tmp_path, capsys):
    js = tmp_path / "b.json"
    code, out = run(["beurling", "--graph", "tree3", "--max-size", 4, "--phi-volume", "volume_inverse",
                     "--json", js], capsys)
    assert code == 0 and "fitted C (volume)" in out.out
    rep = json.loads(js.read_text())
    assert rep["per_size_worst"]["1"]["sup_h"] == 1.0
    assert rep["header"]["command"] == "beurling"


def test_potential_cli(tmp_path, capsys):
    js = tmp_path / "cap.json"
    code, out = run(["potential", "cap", "--graph", "tree3", "--set", "root", "--json", js], capsys)
    assert code == 0
    assert json.loads(js.read_text())["capacity"] == pytest.approx(1.5, abs=1e-3)
    code, out = run(["potential", "heat", "--graph", "z3", "--x", "0,0,0", "--t-max", 4], capsys)
    assert code == 0
    t, v = out.out.splitlines()[2].split()
    assert t == "2" and float(v) == pytest.approx(1 / 6, rel=1e-15)
    code, out = run(["potential", "green", "--graph", "tree3", "--walks", 2000, "--cutoff", 500,
                     "--seed", 1], capsys)
    assert code == 0 and out.out.startswith("g(root, root)")
    code, out = run(["potential", "sandwich", "--graph", "z3", "--set", "0,0,0;1,0,0"], capsys)
    assert code == 0 and "holds True" in out.out


def test_bounds_cli(tmp_path, capsys):
    code, out = run(["bounds", "--family", "carpet3"], capsys)
    assert code == 0
    beta = float(out.out.split("beta = ")[1].split()[0])
    assert beta == pytest.approx((math.log2(13) - 2) / 3, abs=1e-6)
    assert "d(n) = 2.764" in out.out
    js = tmp_path / "b.json"
    code, _ = run(["bounds", "--tail", "2,5.43656365691809", "--fill", "3,10,2,5", "--json", js], capsys)
    data = json.loads(js.read_text())
    assert data["ld_tail_bound"] == pytest.approx(math.exp(-4 * math.e * math.log(2)), rel=1e-9)
    assert 0 <= data["fill_in_order"]["clamped"] <= 1
