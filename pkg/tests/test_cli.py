import json
import subprocess
import sys

import numpy as np
import pytest

from pgo_admm import cli, solver
from pgo_admm.graph_io import parse_g2o
from pgo_admm.sphereqp import NumericalFailure


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture
def ring(tmp_path):
    prefix = tmp_path / "ring"
    assert run("gen", "ring", "--n", 100, "--sigma-r", 0.01, "--sigma-t", 0.01, "--seed", 1, "--out", prefix) == 0
    return prefix


def test_gen_ring_files(ring):
    g, poses = parse_g2o(f"{ring}.g2o")
    _, truth = parse_g2o(f"{ring}.truth.g2o")
    assert g.m == 100 and len(poses) == 100 and len(truth) == 100


def test_gen_deterministic(tmp_path, ring):
    again = tmp_path / "again"
    run("gen", "ring", "--n", 100, "--sigma-r", 0.01, "--sigma-t", 0.01, "--seed", 1, "--out", again)
    for suffix in (".g2o", ".truth.g2o"):
        assert open(f"{ring}{suffix}").read() == open(f"{again}{suffix}").read()


def test_gen_cube_edge_count(tmp_path, capsys):
    assert run("gen", "cube", "--nhat", 7, "--p", 0.3, "--seed", 1, "--out", tmp_path / "cube") == 0
    info = json.loads(capsys.readouterr().out)
    g, _ = parse_g2o(tmp_path / "cube.g2o")
    sd = np.sqrt(2 * (3 * 49 * 6 - 342) * 0.21)
    assert info["n_edges"] == g.m and abs(g.m - 666) <= 4 * sd and g.n == 343


@pytest.mark.parametrize("argv", [["gen", "ring", "--n", "2", "--out", "x"], ["gen", "cube", "--nhat", "1", "--out", "x"],
                                  ["gen", "ring", "--sigma-r", "0", "--out", "x"], ["bogus"], []])
def test_usage_errors(argv, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert cli.main(argv) == 2


def test_solve_noiseless_file_init(tmp_path, capsys):
    prefix = tmp_path / "clean"
    run("gen", "ring", "--n", 20, "--noiseless", "--out", prefix)
    trace = tmp_path / "trace.csv"
    assert run("solve", "--in", f"{prefix}.g2o", "--init", "file", "--trace", trace) == 0
    rows = trace.read_text().splitlines()
    assert rows[0] == "k,e,psi,viol_pq,viol_ts,dlambda,dz,ms" and len(rows) - 1 <= 5


def test_solve_truth_path_init(tmp_path):
    prefix = tmp_path / "clean"
    run("gen", "ring", "--n", 20, "--noiseless", "--out", prefix)
    assert run("solve", "--in", f"{prefix}.g2o", "--init", f"{prefix}.truth.g2o") == 0


def test_solve_rejects_tau(ring):
    assert run("solve", "--in", f"{ring}.g2o", "--tau", 2.5) == 2


@pytest.mark.parametrize("argv", [["--beta", "0"], ["--beta", "x"], ["--max-iter", "0"], ["--init", "nope.g2o"]])
def test_solve_flag_errors(ring, argv):
    assert cli.main(["solve", "--in", f"{ring}.g2o", *argv]) == 2


def test_solve_bad_inputs(tmp_path):
    assert run("solve", "--in", tmp_path / "missing.g2o") == 2
    bad = tmp_path / "bad.g2o"
    bad.write_text("EDGE_SE3:QUAT 0 1 x\n")
    assert run("solve", "--in", bad) == 2
    split = tmp_path / "split.g2o"
    split.write_text("EDGE_SE3:QUAT 0 1 0 0 0 0 0 0 1\nEDGE_SE3:QUAT 2 3 0 0 0 0 0 0 1\n")
    assert run("solve", "--in", split) == 2
    novert = tmp_path / "novert.g2o"
    novert.write_text("EDGE_SE3:QUAT 0 1 0 0 0 0 0 0 1\n")
    assert run("solve", "--in", novert, "--init", "file") == 2


def test_max_iter_exit_code(ring):
    assert run("solve", "--in", f"{ring}.g2o", "--beta", 300, "--max-iter", 2) == 3


def test_numerical_failure_exit_code(ring, monkeypatch, capsys):
    def boom(*a, **k):
        raise NumericalFailure("no real eigenvalue", vertex=17)

    monkeypatch.setattr(solver, "solve", boom)
    assert run("solve", "--in", f"{ring}.g2o") == 4
    assert "vertex 17" in capsys.readouterr().err


def test_manifest_contents(ring, tmp_path, monkeypatch):
    monkeypatch.setenv("PGO_THREADS", "3")
    man = tmp_path / "run.json"
    assert run("solve", "--in", f"{ring}.g2o", "--beta", 50, "--manifest", man) in (0, 3)
    doc = json.loads(man.read_text())
    assert doc["config"]["threads"] == 3 and doc["config"]["beta1"] == 50.0 and not doc["beta_auto"]
    assert doc["status"] in ("converged", "max-iter") and doc["iterations"] >= 1 and "wall_s" in doc
    assert run("solve", "--in", f"{ring}.g2o", "--manifest", man, "--threads", 2) == 0
    doc = json.loads(man.read_text())
    assert doc["config"]["threads"] == 2 and doc["beta_auto"] and doc["config"]["beta1"] > 1


def test_replay_reproduces(ring, tmp_path):
    out, trace, man = tmp_path / "est.g2o", tmp_path / "t.csv", tmp_path / "m.json"
    code = run("solve", "--in", f"{ring}.g2o", "--beta", 5, "--out", out, "--trace", trace, "--manifest", man, "--no-timing")
    assert run("replay", "--manifest", man, "--out-dir", tmp_path / "rep") == code
    assert (tmp_path / "rep" / "estimate.g2o").read_bytes() == out.read_bytes()
    assert (tmp_path / "rep" / "trace.csv").read_bytes() == trace.read_bytes()


def test_replay_detects_changed_input(ring, tmp_path):
    man = tmp_path / "m.json"
    run("solve", "--in", f"{ring}.g2o", "--manifest", man)
    with open(f"{ring}.g2o", "a") as fh:
        fh.write("# edited\n")
    assert run("replay", "--manifest", man, "--out-dir", tmp_path / "rep") == 2


def test_eval(ring, tmp_path, capsys):
    truth = f"{ring}.truth.g2o"
    assert run("eval", "--est", truth, "--truth", truth, "--graph", f"{ring}.g2o") == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["rel_err"] == 0 and rep["nrmse"] == 0 and set(rep) == {"rel_err", "nrmse", "loss_theta", "loss_q", "loss_t"}
    assert run("eval", "--est", truth, "--truth", truth) == 0
    assert set(json.loads(capsys.readouterr().out)) == {"rel_err", "nrmse"}


def test_eval_length_mismatch(ring, tmp_path):
    small = tmp_path / "small"
    run("gen", "ring", "--n", 10, "--out", small)
    assert run("eval", "--est", f"{small}.truth.g2o", "--truth", f"{ring}.truth.g2o") == 2


def test_bench(tmp_path):
    out = tmp_path / "bench.csv"
    assert run("bench", "--suite", "ring", "--sizes", 20, 30, "--repeats", 5, "--seed", 10, "--out", out) == 0
    rows = out.read_text().splitlines()
    assert rows[0] == cli.BENCH_HEADER
    body = [r.split(",") for r in rows[1:]]
    runs = [r for r in body if r[2] != "median"]
    assert len(runs) == 10 and sum(r[2] == "median" for r in body) == 2
    assert sorted({int(r[3]) for r in runs}) == [10, 11, 12, 13, 14]
    # accuracy columns depend only on the seeds
    out2 = tmp_path / "bench2.csv"
    run("bench", "--suite", "ring", "--sizes", 20, 30, "--repeats", 5, "--seed", 10, "--out", out2)
    strip = lambda text: [r.split(",")[:8] + r.split(",")[10:] for r in text.splitlines()]  # noqa: E731
    assert strip(out.read_text()) == strip(out2.read_text())


@pytest.mark.parametrize("threads", [4, 8])
def test_outputs_identical_across_threads(ring, tmp_path, threads):
    def go(k):
        d = tmp_path / f"t{k}"
        d.mkdir(exist_ok=True)
        run("solve", "--in", f"{ring}.g2o", "--beta", 5, "--c", 2, "--threads", k, "--out", d / "e.g2o",
            "--trace", d / "t.csv", "--no-timing")
        return (d / "e.g2o").read_bytes(), (d / "t.csv").read_bytes()

    assert go(1) == go(threads)


def test_console_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "pgo_admm.cli", "gen", "ring", "--n", "5", "--out", str(tmp_path / "r")],
                         capture_output=True, text=True)
    assert res.returncode == 0 and (tmp_path / "r.g2o").exists()
    res = subprocess.run([sys.executable, "-m", "pgo_admm.cli", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.strip() == "0.1.0"
