import csv
import io
import json
import subprocess
import sys

import pytest

from ghzrate.cli import COLUMNS, main, parse_axis

SIM = ["--rounds", "5000", "--burn-in", "100", "--replicas", "4"]


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def rows(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_rate_exact(capsys):
    code, out, _ = run(capsys, "rate", "--method", "exact", "--n", "2", "--m", "1", "--p", "0.1")
    assert code == 0
    assert out.splitlines()[0] == ",".join(COLUMNS)
    (rec,) = rows(out)
    assert float(rec["rate"]) == pytest.approx(0.067857, abs=1e-6)


def test_rate_approx_single_party(capsys):
    code, out, _ = run(capsys, "rate", "--method", "approx", "--n", "1", "--m", "7", "--p", "0.3", "--format", "json")
    assert code == 0
    (rec,) = json.loads(out)
    assert rec["L_mean"] == pytest.approx(2.1)
    assert list(rec) == COLUMNS


def test_rate_invalid_m(capsys):
    code, _, err = run(capsys, "rate", "--method", "exact", "--n", "2", "--m", "0", "--p", "0.1")
    assert code == 2 and "m<1" in err


def test_rate_invalid_combination(capsys):
    code, _, err = run(capsys, "rate", "--method", "analytic-m1", "--n", "2", "--m", "3", "--p", "0.1")
    assert code == 2
    code, _, _ = run(capsys, "rate", "--method", "exact", "--n", "9", "--m", "9", "--p", "0.1")
    assert code == 2


def test_bad_flag_exit_code(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["rate", "--method", "nonsense", "--n", "2", "--m", "1", "--p", "0.1"])
    assert exc.value.code == 2


def test_simulate_seed_roundtrip(capsys):
    args = ["rate", "--method", "simulate", "--n", "3", "--m", "2", "--p", "0.2", *SIM]
    code, out1, err = run(capsys, *args)
    assert code == 0
    seed = err.split("seed=")[1].split()[0]
    code, out2, _ = run(capsys, *args, "--seed", seed)
    strip = lambda text: [{k: v for k, v in r.items() if k != "wall_ms"} for r in rows(text)]
    assert strip(out1) == strip(out2)
    assert rows(out2)[0]["seed"] == seed


def test_auto_method(capsys):
    code, out, _ = run(capsys, "rate", "--n", "2", "--m", "3", "--p", "0.1")
    assert [r["method"] for r in rows(out)] == ["exact"]
    code, out, _ = run(capsys, "rate", "--n", "8", "--m", "5", "--p", "0.1", "--seed", "1", *SIM)
    assert [r["method"] for r in rows(out)] == ["approx", "simulate"]


def test_chain_segments_alias(capsys):
    _, a, _ = run(capsys, "rate", "--method", "exact", "--chain-segments", "3", "--m", "2", "--p", "0.3")
    _, b, _ = run(capsys, "rate", "--method", "exact", "--n", "3", "--m", "2", "--p", "0.3")
    assert rows(a)[0]["L_mean"] == rows(b)[0]["L_mean"]


def test_out_file(capsys, tmp_path):
    target = tmp_path / "r.csv"
    code, out, _ = run(capsys, "rate", "--method", "exact", "--n", "2", "--m", "1", "--p", "0.5", "--out", str(target))
    assert code == 0 and out == ""
    assert float(rows(target.read_text())[0]["L_mean"]) == pytest.approx(0.375)


def test_compare_bipartite(capsys):
    code, out, _ = run(capsys, "compare", "--n", "2", "--m", "10", "--p", "0.1", "--seed", "3", *SIM, "--format", "json")
    assert code == 0
    values = {r["method"]: r["L_mean"] for r in json.loads(out)}
    assert values["exact"] >= values["smallp-bipartite"]
    # Exit status 0 means no bound violation was flagged.


def test_compare_single_party(capsys):
    code, out, _ = run(capsys, "compare", "--n", "1", "--m", "4", "--p", "0.3", "--no-simulate", "--format", "json")
    assert code == 0
    for r in json.loads(out):
        if r["L_mean"] is not None:
            assert r["L_mean"] == pytest.approx(1.2, abs=1e-10)


def test_compare_table_and_na(capsys):
    code, out, _ = run(capsys, "compare", "--n", "3", "--m", "2", "--p", "0.1", "--no-simulate")
    assert code == 0
    assert "exact" in out and "approx" in out and "bound-upper" in out


def test_compare_approx_vs_simulate(capsys):
    code, out, _ = run(
        capsys, "compare", "--n", "5", "--m", "3", "--p", "0.1", "--seed", "8",
        "--rounds", "40000", "--replicas", "8", "--format", "json",
    )
    values = {r["method"]: r["L_mean"] for r in json.loads(out)}
    assert abs(values["approx"] - values["simulate"]) / values["simulate"] < 0.10


def test_trees_three_party(capsys):
    code, out, _ = run(capsys, "trees", "--n", "3", "--m", "2", "--root", "2,2,0")
    assert code == 0
    assert rows(out)[0]["count"] == "3"


def test_trees_bipartite_and_stationary(capsys, tmp_path):
    edges = tmp_path / "g.txt"
    code, out, _ = run(capsys, "trees", "--n", "2", "--m", "2", "--stationary", "--edges", str(edges))
    recs = rows(out)
    assert [r["count"] for r in recs] == ["1", "1", "1"]
    assert [r["probability"] for r in recs] == ["1/4", "1/2", "1/4"]
    assert edges.read_text().strip()


def test_trees_growth_table(capsys):
    code, out, _ = run(capsys, "trees", "--n", "3", "--m-range", "1:6", "--root", "mm0", "--format", "json")
    counts = [r["count"] for r in json.loads(out)]
    assert len(counts) == 6 and counts == sorted(set(counts))


def test_trees_unknown_root(capsys):
    code, _, err = run(capsys, "trees", "--n", "3", "--m", "2", "--root", "0,2,2")
    assert code == 2 and "root" in err


def test_sweep_p0(capsys):
    code, out, _ = run(capsys, "sweep", "--n", "2,3", "--m", "1:3", "--p", "0", "--methods", "exact,approx,bounds")
    assert code == 0
    recs = rows(out)
    assert recs and all(float(r["rate"]) == 0.0 for r in recs if r["rate"])


def test_sweep_order_and_errors(capsys):
    code, out, _ = run(capsys, "sweep", "--n", "2", "--m", "1,2", "--p", "0.1", "--methods", "exact,analytic")
    recs = rows(out)
    assert [(r["m"], r["method"]) for r in recs] == [("1", "exact"), ("1", "analytic-m1"), ("2", "exact"), ("2", "analytic")]
    assert recs[-1]["error"].startswith("n/a")


def test_sweep_saturation(capsys):
    code, out, _ = run(capsys, "sweep", "--n", "120", "--m", "1", "--p", "0.1", "--methods", "approx")
    sat = [r for r in rows(out) if r["method"] == "saturation-m"]
    assert len(sat) == 1 and 80 <= int(sat[0]["m"]) <= 90


def test_sweep_unknown_method(capsys):
    code, _, _ = run(capsys, "sweep", "--m", "1", "--p", "0.1", "--methods", "magic")
    assert code == 2


def test_parse_axis():
    assert parse_axis("1,2") == [1, 2]
    assert parse_axis("1:4") == [1, 2, 3, 4]
    assert parse_axis("0.1:0.3:0.1", float) == pytest.approx([0.1, 0.2, 0.3])


def test_console_entry_point():
    out = subprocess.run(
        [sys.executable, "-m", "ghzrate.cli", "rate", "--method", "exact", "--n", "2", "--m", "1", "--p", "0.5"],
        capture_output=True, text=True, check=True,
    )
    assert "0.375" in out.stdout
