import csv
import json

import pytest

from pabest.cli import EXIT_CONFIG, EXIT_NOT_CONVERGED, EXIT_OK, EXIT_PROBER, main

TOPO = """\
links: l1 l2 l3
paths:
p1 h1 h2 : l1 l2
p2 h1 h3 : l2 l3
"""


@pytest.fixture
def files(tmp_path):
    (tmp_path / "t.txt").write_text(TOPO)
    (tmp_path / "gt.json").write_text('{"l1": 60, "l2": 30, "l3": 80}')
    return tmp_path


def estimate_args(d, out="out", *extra):
    return ["estimate", "--topology", str(d / "t.txt"), "--strategy", "wci", "--gamma", "0.5",
            "--eta", "0.95", "--beta", "10", "--simulated", "--ground-truth", str(d / "gt.json"),
            "--seed", "7", "--out", str(d / out), *extra]


def test_estimate_happy_path(files):
    assert main(estimate_args(files)) == EXIT_OK
    out = files / "out"
    for name in ("results.json", "summary.csv", "manifest.json", "measurements.csv"):
        assert (out / name).exists()
    res = json.loads((out / "results.json").read_text())
    assert {p["path"] for p in res["paths"]} == {"p1", "p2"}
    rows = list(csv.DictReader(open(out / "summary.csv")))
    assert list(rows[0]) == ["path_id", "beta_min", "beta_max", "measurements", "bytes"]
    man = json.loads((out / "manifest.json").read_text())
    assert man["command"] == "estimate" and man["options"]["seed"] == 7
    assert man["config"]["strategy"]["kind"] == "wci"


def test_seed_reproducible_and_manifest_replay(files):
    assert main(estimate_args(files, "a")) == EXIT_OK
    assert main(estimate_args(files, "b")) == EXIT_OK
    a = (files / "a" / "results.json").read_bytes()
    assert a == (files / "b" / "results.json").read_bytes()
    assert main(["estimate", "--config", str(files / "a" / "manifest.json"), "--out", str(files / "c")]) == EXIT_OK
    assert a == (files / "c" / "results.json").read_bytes()


def test_gt_uniform(files):
    args = ["estimate", "--topology", str(files / "t.txt"), "--simulated", "--gt-uniform", "1,100", "--seed", "3"]
    assert main(args + ["--out", str(files / "a")]) == EXIT_OK
    assert main(args + ["--out", str(files / "b")]) == EXIT_OK
    assert (files / "a" / "ground_truth.json").read_text() == (files / "b" / "ground_truth.json").read_text()


def test_precedence(files):
    (files / "c.ini").write_text("[defaults]\nseed = 3\nbeta = 30\n[estimate]\nbeta = 20\neta = 0.9\n"
                                 "simulated = yes\ngt-uniform = 1,100\n")
    rc = main(["estimate", "--config", str(files / "c.ini"), "--topology", str(files / "t.txt"),
               "--beta", "15", "--out", str(files / "o")])
    assert rc == EXIT_OK
    o = json.loads((files / "o" / "manifest.json").read_text())["options"]
    assert (o["beta"], o["eta"], o["seed"], o["epsilon"]) == (15.0, 0.9, 3, 5.0)


@pytest.mark.parametrize("args", [
    ["estimate", "--topology", "missing.txt", "--simulated", "--gt-uniform", "1,100"],
    ["estimate", "--bogus-flag"],
    ["estimate", "--topology", "{d}/t.txt"],                       # no prober chosen
    ["estimate", "--topology", "{d}/t.txt", "--simulated"],        # no ground truth
    ["estimate", "--topology", "{d}/t.txt", "--simulated", "--gt-uniform", "9"],
    ["estimate", "--topology", "{d}/t.txt", "--simulated", "--gt-uniform", "1,100", "--eta", "1.5"],
    ["estimate", "--config", "{d}/bad.ini", "--topology", "{d}/t.txt"],
    ["estimate", "--config", "{d}/broken.ini", "--topology", "{d}/t.txt"],
    ["estimate", "--config", "{d}/nope.ini"],
    ["validate", "--topology", "{d}/t.txt", "--simulated", "--gt-uniform", "1,100"],  # no results
    ["fit-likelihood", "--data", "{d}/nope.csv"],
])
def test_config_errors(files, args):
    (files / "bad.ini").write_text("[estimate]\nbogus = 1\n")
    (files / "broken.ini").write_text("no section header\n")
    argv = [a.replace("{d}", str(files)) for a in args] + ["--out", str(files / "o")]
    if args == ["estimate", "--bogus-flag"]:
        argv = args
    assert main(argv) == EXIT_CONFIG


def test_strict_not_converged(files):
    argv = estimate_args(files) + ["--max-iter", "2", "--strict"]
    assert main(argv) == EXIT_NOT_CONVERGED
    assert main(estimate_args(files) + ["--max-iter", "2"]) == EXIT_OK


@pytest.mark.network
def test_prober_failure(files):
    import socket
    s = socket.socket()
    s.bind(("127.0.0.1", 0))
    port = s.getsockname()[1]
    s.close()
    (files / "ep.json").write_text(json.dumps({"h2": f"127.0.0.1:{port}", "p2": f"127.0.0.1:{port}"}))
    argv = ["estimate", "--topology", str(files / "t.txt"), "--endpoints", str(files / "ep.json"),
            "--out", str(files / "o")]
    assert main(argv) == EXIT_PROBER
    assert json.loads((files / "o" / "results.json").read_text())["aborted"]


def test_validate(files):
    assert main(estimate_args(files)) == EXIT_OK
    argv = ["validate", "--topology", str(files / "t.txt"), "--results", str(files / "out" / "results.json"),
            "--simulated", "--ground-truth", str(files / "gt.json"), "--repeats", "5", "--out", str(files / "v")]
    assert main(argv) == EXIT_OK
    doc = json.loads((files / "v" / "validation.json").read_text())
    assert set(doc["frequency"]) == {"beta_min", "beta_min+eps", "beta_max", "beta_max+eps"}


def test_sweep_te_rows(files):
    argv = ["sweep", "te", "--te", "0,0.05,0.15,0.25,0.5,0.75,0.9", "--sizes", "4", "--replicates", "1",
            "--out", str(files / "s")]
    assert main(argv) == EXIT_OK
    rows = list(csv.DictReader(open(files / "s" / "te.csv")))
    assert [float(r["te"]) for r in rows] == [0, 0.05, 0.15, 0.25, 0.5, 0.75, 0.9]
    man = json.loads((files / "s" / "manifest.json").read_text())
    assert man["kind"] == "te" and "numpy" in man["versions"]


def test_sweep_strategies(files):
    argv = ["sweep", "strategies", "--strategies", "wci,rr-strict,seq", "--sizes", "4", "--replicates", "2",
            "--out", str(files / "s")]
    assert main(argv) == EXIT_OK
    rows = list(csv.DictReader(open(files / "s" / "strategies.csv")))
    assert [r["strategy"] for r in rows] == ["wci", "rr-strict", "seq"]


def test_fit_likelihood(files):
    import math
    lines = ["path_id,rate_mbps,success_count,total_count"]
    for r in range(1, 101, 3):
        p = min(max(1 / (1 + math.exp(0.28 * (r - 40))), 0.02), 0.98)
        lines.append(f"a,{r},{round(p * 10000)},10000")
    (files / "train.csv").write_text("\n".join(lines) + "\n")
    assert main(["fit-likelihood", "--data", str(files / "train.csv"), "--out", str(files / "f")]) == EXIT_OK
    doc = json.loads((files / "f" / "fit.json").read_text())
    assert doc["alpha"] == pytest.approx(0.28, abs=0.01) and doc["pab"]["a"] == pytest.approx(40, abs=0.5)


def test_help_and_version(capsys):
    assert main(["--version"]) == 0
    assert "pabest" in capsys.readouterr().out
    assert main([]) == EXIT_CONFIG
