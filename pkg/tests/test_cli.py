import json
import subprocess
import sys

import pytest

from sparsedp.cli import main
from sparsedp.summary import read_summary
from sparsedp.table import read_table


@pytest.fixture(scope="module")
def table_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "t.csv"
    assert main(["synth", "--m", "100000", "--rho", "0.1", "--seed", "1", "--out", str(path)]) == 0
    return path


def _meta(path):
    return json.loads(path.read_text().splitlines()[0][len("#meta "):])


def test_synth_writes_table(table_file):
    t = read_table(table_file)
    assert t.m == 100_000 and t.n == 10_000


def test_anonymize_filter_priority(table_file, tmp_path):
    out = tmp_path / "s.csv"
    rc = main(["anonymize", "--input", str(table_file), "--m", "100000", "--method",
               "filter-priority", "--epsilon", "0.1", "--theta", "40", "--size", "5000",
               "--seed", "7", "--out", str(out)])
    assert rc == 0
    s = read_summary(out)
    assert len(s) == 5000
    assert s.origin is None
    meta = _meta(out)
    assert meta["theta"] == 40 and meta["s"] == 5000 and meta["n"] == 10_000
    assert "seed" not in meta


def test_same_seed_byte_identical(table_file, tmp_path):
    outs = []
    for name in ("a.csv", "b.csv"):
        out = tmp_path / name
        main(["anonymize", "--input", str(table_file), "--method", "threshold", "--tau", "300",
              "--seed", "3", "--out", str(out)])
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]


@pytest.mark.parametrize("method, key", [("filter", "theta"), ("threshold", "tau"),
                                         ("priority", "s"), ("filter-priority", "theta")])
def test_target_size_echoed(table_file, tmp_path, method, key):
    out = tmp_path / "s.csv"
    rc = main(["anonymize", "--input", str(table_file), "--method", method,
               "--target-size", "4000", "--out", str(out)])
    assert rc == 0
    meta = _meta(out)
    assert key in meta and meta["target_size"] == 4000


@pytest.mark.parametrize("extra", [
    ["--method", "threshold", "--tau", "5", "--target-size", "100"],
    ["--method", "threshold", "--tau", "5", "--consistency", "--dyadic"],
    ["--method", "filter", "--theta", "5", "--consistency"],
    ["--method", "priority"],
    ["--method", "filter", "--theta", "5", "--tau", "3"],
    ["--method", "filter", "--theta", "5", "--epsilon", "0"],
    ["--method", "filter", "--theta", "5", "--seed", "banana"],
    ["--method", "geometric-full", "--target-size", "10"],
])
def test_usage_errors_exit_2(table_file, tmp_path, extra):
    rc = main(["anonymize", "--input", str(table_file), "--out", str(tmp_path / "x.csv"), *extra])
    assert rc == 2


def test_data_errors_exit_1(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("3,5\n999,1\n")
    args = ["anonymize", "--input", str(bad), "--m", "100", "--method", "filter", "--theta", "2",
            "--out", str(tmp_path / "x.csv")]
    assert main(args) == 1
    args[2] = str(tmp_path / "missing.csv")
    assert main(args) == 1


def test_dyadic_consistency_and_query(table_file, tmp_path):
    out = tmp_path / "d.csv"
    rc = main(["anonymize", "--input", str(table_file), "--method", "filter", "--theta", "60",
               "--dyadic", "--consistency", "--out", str(out)])
    assert rc == 0
    meta = _meta(out)
    assert meta["dyadic"] and meta["consistency"] and meta["sensitivity"] == 18
    q = tmp_path / "q.csv"
    q.write_text("R,0,4999\nP,17\n")
    rep = tmp_path / "r.csv"
    assert main(["query", "--summary", str(out), "--queries", str(q), "--table", str(table_file),
                 "--out", str(rep)]) == 0
    lines = rep.read_text().splitlines()
    assert lines[0] == "query_id,truth,estimate,abs_err,rel_err" and len(lines) == 3


def test_dyadic_filter_priority_consistency(table_file, tmp_path):
    out = tmp_path / "fp.csv"
    assert main(["anonymize", "--input", str(table_file), "--method", "filter-priority",
                 "--theta", "60", "--size", "500", "--dyadic", "--consistency",
                 "--out", str(out)]) == 0
    assert len(read_summary(out)) == 500


def test_sketch_round_trip_query(table_file, tmp_path):
    out = tmp_path / "k.csv"
    assert main(["anonymize", "--input", str(table_file), "--method", "sketch", "--width", "64",
                 "--depth", "3", "--out", str(out)]) == 0
    q = tmp_path / "q.csv"
    q.write_text("P,5\nS,1 2 3\nR,0,9\n")
    rep = tmp_path / "r.csv"
    assert main(["query", "--summary", str(out), "--queries", str(q), "--combine", "median",
                 "--out", str(rep)]) == 0
    assert len(rep.read_text().splitlines()) == 4


def test_query_bad_file_exit_1(table_file, tmp_path):
    q = tmp_path / "q.csv"
    q.write_text("Z,1\n")
    s = tmp_path / "s.csv"
    main(["anonymize", "--input", str(table_file), "--method", "filter", "--theta", "40",
          "--out", str(s)])
    assert main(["query", "--summary", str(s), "--queries", str(q)]) == 1
    q.write_text("P,100000\n")
    assert main(["query", "--summary", str(s), "--queries", str(q)]) == 1


def test_verify_exit_code(capsys):
    rc = main(["verify", "--method", "threshold", "--trials", "400", "--seed", "3"])
    out = capsys.readouterr().out
    assert rc == 0 and out.strip().endswith("PASS")


def test_bench_flags_and_config(tmp_path):
    out = tmp_path / "b.csv"
    assert main(["bench", "--methods", "filter2,threshold", "--m-grid", "20000", "--n", "200",
                 "--repeats", "1", "--out", str(out)]) == 0
    assert out.read_text().splitlines()[0].startswith("method,path,m,n")
    cfg = tmp_path / "exp.cfg"
    res = tmp_path / "exp.csv"
    cfg.write_text(f"experiment = dyadic\nm = 4096\nrho = 0.05\nquery_sizes = 100, 1000\n"
                   f"queries = 5\noutput = {res}\n")
    assert main(["bench", "--config", str(cfg)]) == 0
    assert "mean_abs_error" in res.read_text()


def test_missing_subcommand_exit_2():
    assert main([]) == 2


def test_module_entry_point(tmp_path):
    out = tmp_path / "t.csv"
    proc = subprocess.run([sys.executable, "-m", "sparsedp", "synth", "--m", "100", "--rho", "0.1",
                           "--out", str(out)], capture_output=True)
    assert proc.returncode == 0 and out.exists()
