import csv
import json
import math
import subprocess
import sys

import numpy as np
import pytest

from linot import bench, cli
from linot.io import load_measure


def test_deviation_formula():
    assert bench.deviation_pct(2.5, 2.5) == 100.0
    assert bench.deviation_pct(-2.0, -2.0) == 100.0
    assert bench.deviation_pct(2.0, 1.0) == 150.0
    assert bench.deviation_pct(-2.0, -1.0) == 50.0


def test_gen_gaussians():
    mu, nu = bench.gen_gaussians(2000, 3)
    mu2, nu2 = bench.gen_gaussians(2000, 3)
    np.testing.assert_array_equal(mu.points, mu2.points)
    np.testing.assert_array_equal(nu.points, nu2.points)
    assert np.linalg.norm(nu.points, axis=1).max() == pytest.approx(1.0, rel=1e-15)
    assert np.all(np.abs(mu.points.mean(0)) <= 3 * math.sqrt(0.1 / 2000))
    assert not np.array_equal(bench.gen_gaussians(10, 4)[0].points, bench.gen_gaussians(10, 3)[0].points)
    with pytest.raises(ValueError):
        bench.gen_gaussians(0, 0)


def test_gen_sphere():
    mu, nu = bench.gen_sphere(300, 0)
    np.testing.assert_allclose(np.linalg.norm(mu.points, axis=1), 1.0, rtol=1e-14)
    assert np.all(mu.points @ np.array([0.0, 0.0, 1.0]) >= math.cos(0.6) - 1e-15)
    assert np.all(nu.points @ np.array([1.0, 0.0, 0.0]) >= math.cos(0.6) - 1e-15)


def test_dense_gaussian_kernel_matches_direct():
    rng = np.random.default_rng(0)
    X, Y = rng.normal(size=(2100, 2)), rng.normal(size=(30, 2))
    K = bench.dense_gaussian_kernel(X, Y, 0.5).K
    D = ((X[:, None] - Y[None]) ** 2).sum(-1)
    np.testing.assert_allclose(K, np.exp(-D / 0.5), rtol=1e-12, atol=1e-300)
    assert not K.flags.writeable


def test_spec_validation():
    with pytest.raises(ValueError):
        bench.ExperimentSpec(ground_truth_tol=1e-6, tol=1e-6)
    with pytest.raises(ValueError):
        bench.ExperimentSpec(methods=["rf_exact_columns"])
    with pytest.raises(ValueError):
        bench.ExperimentSpec(r_values=[])
    with pytest.raises(ValueError):
        bench.ExperimentSpec(dataset={"kind": "mnist"})


def test_run_benchmark_small(tmp_path):
    spec = bench.ExperimentSpec(
        dataset={"kind": "gaussians2d", "n": 60}, epsilons=[0.5], r_values=[50, 200],
        seeds=[0, 1], methods=list(bench.METHODS))
    csv_path, svg_path = tmp_path / "out.csv", tmp_path / "out.svg"
    recs = bench.run_benchmark(spec, csv_path=csv_path, svg_path=svg_path)
    assert len(recs) == 2 + 2 * 2 * 2
    with open(csv_path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == bench.CSV_HEADER
    assert len(rows) == 1 + len(recs)
    back = bench.read_records(csv_path)
    assert back == recs
    dense = [r for r in recs if r.method == "dense_sinkhorn"]
    assert all(abs(r.deviation_pct - 100.0) < 1e-3 for r in dense)
    assert all(r.converged for r in recs)
    assert svg_path.read_text().startswith("<svg")


def test_run_benchmark_records_failed_cells(tmp_path, monkeypatch):
    real = bench.run_cell

    def flaky(method, mu, nu, eps, r, seed, cfg):
        if seed == 1:
            raise FloatingPointError("boom")
        return real(method, mu, nu, eps, r, seed, cfg)

    monkeypatch.setattr(bench, "run_cell", flaky)
    spec = bench.ExperimentSpec(dataset={"kind": "gaussians2d", "n": 30},
                                methods=["rf_sinkhorn"], r_values=[20], seeds=[0, 1])
    recs = bench.run_benchmark(spec, csv_path=tmp_path / "o.csv")
    assert recs[0].converged and not recs[1].converged
    assert math.isnan(recs[1].w_hat)
    back = bench.read_records(tmp_path / "o.csv")
    assert len(back) == 2 and math.isnan(back[1].deviation_pct)


def _run(argv, capsys):
    code = cli.main(argv)
    return code, capsys.readouterr()


def test_cli_gen_and_solve(tmp_path, capsys):
    src, dst = str(tmp_path / "s.csv"), str(tmp_path / "t.csv")
    code, _ = _run(["gen", "--n", "50", "--seed", "1", src, dst], capsys)
    assert code == 0
    assert load_measure(src).n == 50
    code, out = _run(["solve", src, dst, "--method", "dense", "--tol", "1e-9"], capsys)
    assert code == 0
    dense = json.loads(out.out)
    assert dense["converged"]
    code, out = _run(["solve", src, dst, "--r", "3000", "--tol", "1e-9",
                      "--potentials", str(tmp_path / "p.npz")], capsys)
    assert code == 0
    rf = json.loads(out.out)
    assert rf["w_hat"] == pytest.approx(dense["w_hat"], rel=0.05)
    with np.load(tmp_path / "p.npz") as z:
        assert z["alpha"].shape == (50,)


def test_cli_gen_is_deterministic(tmp_path, capsys):
    p = [str(tmp_path / f"{i}.csv") for i in range(4)]
    _run(["gen", "--n", "20", p[0], p[1]], capsys)
    _run(["gen", "--n", "20", p[2], p[3]], capsys)
    assert open(p[0]).read() == open(p[2]).read()


def test_cli_bench_stdout(capsys):
    code, out = _run(["bench", "--n", "40", "--r-values", "30", "--n-seeds", "1", "--quiet"], capsys)
    assert code == 0
    lines = out.out.strip().splitlines()
    assert lines[0] == ",".join(bench.CSV_HEADER)
    assert len(lines) == 3


def test_cli_budget(capsys):
    code, out = _run(["budget", "--delta", "0.1", "--tau", "0.05", "--epsilon", "0.5",
                      "--n", "40000", "--C-inf", "4"], capsys)
    assert code == 0
    first, payload = out.out.strip().splitlines()
    assert int(first) == 33807
    assert json.loads(payload)["r"] == 33807
    _, out2 = _run(["budget", "--delta", "0.2", "--tau", "0.05", "--epsilon", "0.5",
                    "--n", "40000", "--C-inf", "4"], capsys)
    assert 33807 / int(out2.out.split()[0]) == pytest.approx(4.0, rel=1e-3)


def test_cli_budget_invalid(capsys):
    code, out = _run(["budget", "--delta", "1.5", "--tau", "0.05", "--epsilon", "0.5", "--n", "10"], capsys)
    assert code == 2
    assert "delta" in out.err


def test_cli_gradcheck(tmp_path, capsys):
    report = tmp_path / "g.json"
    code, out = _run(["gradcheck", "--json", str(report)], capsys)
    assert code == 0
    data = json.loads(report.read_text())
    assert set(data) == {"kernel", "locations", "theta"}
    assert all("fd_max_rel_err" in v for v in data.values())
    code, _ = _run(["gradcheck", "--corrupt", "0.05"], capsys)
    assert code == 1


def test_cli_missing_file(capsys):
    code, out = _run(["solve", "/nonexistent/a.csv", "/nonexistent/b.csv"], capsys)
    assert code == 2


def test_console_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "linot.cli", "gen", "--n", "5",
                          str(tmp_path / "a.json"), str(tmp_path / "b.json")],
                         capture_output=True, text=True)
    assert out.returncode == 0
    assert load_measure(tmp_path / "a.json").n == 5
