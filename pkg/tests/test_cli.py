import json

import numpy as np
import pytest

from admm_mpc.cli import load_config, main, read_bench_csv, write_bench_csv
from admm_mpc.analysis import BenchRow
from admm_mpc.invariant_sets import polygon_area, read_polygon_csv

TOY = {
    "A": [[0.0, 0.0], [0.0, 0.0]],
    "B": [[1.0, 0.0], [0.0, 1.0]],
    "x_max": [1.0, 1.0],
    "u_max": [1.0, 1.0],
    "Q": [[1.0, 0.0], [0.0, 1.0]],
    "R": [[1.0, 0.0], [0.0, 1.0]],
    "N": 2,
}


def _config(tmp_path, **data):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(data))
    return str(path)


def test_stability_fixture(tmp_path, capsys):
    assert main(["stability", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "all stable" in out and "= 23" in out
    report = json.loads((tmp_path / "report.json").read_text())["stability"]
    assert len(report) == 27
    assert all(r["zero_eigenvalues"] >= 23 and r["rank_E11"] == 5 for r in report)


def test_stability_override_is_unstable(tmp_path, capsys):
    cfg = _config(tmp_path, rho=[10], M=[1], override={"D_z": -2})
    assert main(["stability", "--config", cfg, "--out", str(tmp_path)]) == 1
    assert "unstable" in capsys.readouterr().out


def test_sets_on_unit_box_toy(tmp_path):
    cfg = _config(tmp_path, problem=TOY, rho=[10], M=[1], updates=["shift-LQR"],
                  inits=["naive"], grid_points=5)
    assert main(["sets", "--config", cfg, "--out", str(tmp_path)]) == 0
    T = read_polygon_csv(tmp_path / "sets" / "T.csv")
    assert len(T.vertices) == 4
    assert polygon_area(T) == pytest.approx(4.0)
    grid = (tmp_path / "sets" / "feasible_grid.csv").read_text().splitlines()
    assert len(grid) == 1 + 25
    assert (tmp_path / "sets" / "slice_shift-LQR_rho10_M1_naive.csv").exists()


def test_simulate_from_origin_and_figure_state(tmp_path):
    assert main(["simulate", "--out", str(tmp_path / "a"), "--x0", "0", "0"]) == 0
    rows = (tmp_path / "a" / "traj" / "mpc.csv").read_text().splitlines()
    assert len(rows) == 2  # header and the single entry state
    assert main(["simulate", "--out", str(tmp_path / "b"), "--x0", "-18.680", "3.646"]) == 0
    report = json.loads((tmp_path / "b" / "report.json").read_text())
    assert report["mpc"]["k_inf"] <= 15
    assert (tmp_path / "b" / "traj" / "admm.csv").exists()


def test_simulate_infeasible_state(tmp_path, capsys):
    assert main(["simulate", "--out", str(tmp_path), "--x0", "26", "0"]) == 2
    assert "not feasible" in capsys.readouterr().err


def test_invalid_config(tmp_path):
    assert main(["stability", "--config", _config(tmp_path, rho=[-1])]) == 2
    assert main(["stability", "--config", _config(tmp_path, colour="red")]) == 2
    assert main(["stability", "--config", str(tmp_path / "missing.json")]) == 2
    assert main(["bench", "--config", _config(tmp_path, updates=["sideways"])]) == 2


def test_bench_small_grid_is_reproducible(tmp_path):
    cfg = _config(tmp_path, rho=[10], M=[1, 5], updates=["shift-zero"], inits=["naive", "zero"],
                  samples=4, seed=1)
    assert main(["bench", "--config", cfg, "--out", str(tmp_path / "a")]) == 0
    assert main(["bench", "--config", cfg, "--out", str(tmp_path / "b")]) == 0
    a = (tmp_path / "a" / "results.csv").read_bytes()
    assert a == (tmp_path / "b" / "results.csv").read_bytes()
    rows = read_bench_csv(tmp_path / "a" / "results.csv")
    assert len(rows) == 4
    assert {r["M"] for r in rows} == {"1", "5"}
    table = (tmp_path / "a" / "table2.csv").read_text().splitlines()
    assert len(table) == 1 + 2


def test_bench_csv_round_trip(tmp_path):
    row = BenchRow(13, "shift-zero", "zero", 100.0, 5, vol_ratio=30.99612345678901,
                   cnvg_ratio=1.0, perf_ratio=0.6071, m_star=166.2, k_bar=7)
    write_bench_csv(tmp_path / "r.csv", [row])
    back = read_bench_csv(tmp_path / "r.csv")[0]
    assert float(back["vol"]) == row.vol_ratio
    assert int(back["k_bar"]) == 7 and back["error"] == ""


def test_mstar_trivial_plant(tmp_path, capsys):
    cfg = _config(tmp_path, problem=dict(TOY, x_max=[5.0, 5.0]), rho=[10], updates=["shift-LQR"],
                  inits=["LQR"], samples=3)
    assert main(["mstar", "--config", cfg, "--out", str(tmp_path)]) == 0
    rows = (tmp_path / "mstar.csv").read_text().splitlines()
    assert len(rows) == 2
    assert float(rows[1].split(",")[-1]) < 50


def test_load_config_overrides():
    cfg = load_config(None, seed=9, samples=None)
    assert cfg.seed == 9 and cfg.samples == 500
    assert np.allclose(cfg.build_problem().system.A, [[1, 1], [0, 1]])
