import csv
import io
import json
import math

import numpy as np
import pytest

from ltesim import harness
from ltesim.cli import main
from ltesim.models import get_model
from ltesim.rng import make_key


def small_config(**kw):
    base = dict(model="nagumo", levels=(1, 2), reference_level=3, samples=64, seed=1,
                block_size=16, timings=False)
    base.update(kw)
    return harness.ExperimentConfig(**base)


def test_test_function_examples():
    ac, sis = get_model("allen-cahn"), get_model("sis")
    assert harness.test_function("F1", ac, 0.0) == 1.0
    assert harness.test_function("F2", ac, 1.0) == pytest.approx(math.pi / 4)
    assert harness.test_function("F2", ac, -1.0) == pytest.approx(math.pi / 4)
    assert harness.test_function("F1", sis, 0.5) == 1.0
    assert harness.test_function("F1", sis, 1.0) == pytest.approx(math.exp(-1))
    assert harness.test_function("F1", ac, 1.0 + 1e-15) == pytest.approx(math.exp(-1))
    with pytest.raises(ValueError):
        harness.test_function("F1", ac, 1.01)
    with pytest.raises(ValueError):
        harness.test_function("F3", ac, 0.0)


def test_fit_slope():
    dts = 4.0 ** -np.arange(2, 6)
    slope, intercept, resid = harness.fit_slope(dts, 3.0 * dts ** 0.25)
    assert slope == pytest.approx(0.25)
    assert intercept == pytest.approx(math.log(3.0))
    assert resid < 1e-12
    with pytest.raises(ValueError):
        harness.fit_slope([0.1], [0.2])
    with pytest.raises(ValueError):
        harness.fit_slope([0.1, 0.01], [0.2, 0.0])


def test_level_grid_and_steps():
    g = harness.level_grid(3, 1.0)
    assert (g.N, g.M) == (8, 64)
    g = harness.grid_from_steps(1 / 16, 1 / 4, 1.0)
    assert (g.N, g.M) == (16, 4)
    with pytest.raises(ValueError):
        harness.grid_from_steps(0.3, 0.25, 1.0)


def test_boundary_table_and_csv(tmp_path):
    cfg = harness.ExperimentConfig(model="allen-cahn", schemes=("lte", "em"), lambdas=(1, 3),
                                   samples=20, seed=2, block_size=8)
    rep = harness.boundary_table(cfg)
    assert len(rep.rows) == 4
    assert rep.count("lte", 3.0) == 20
    path = tmp_path / "t.csv"
    harness.emit_csv(rep, path)
    rows = list(csv.reader(path.open()))
    assert tuple(rows[0]) == harness.BoundaryReport.HEADER
    assert len(rows) == 5


def test_zero_samples_gives_header_only(tmp_path):
    cfg = harness.ExperimentConfig(model="sis", schemes=("em",), lambdas=(1,), samples=0)
    rep = harness.boundary_table(cfg)
    assert rep.rows[0]["in_domain"] == 0 and rep.rows[0]["samples"] == 0
    buf = io.StringIO()
    harness.write_csv(harness.BoundaryReport(), buf)
    assert buf.getvalue().strip().split("\n") == [",".join(harness.BoundaryReport.HEADER)]


def test_emit_csv_unwritable(tmp_path):
    with pytest.raises(OSError):
        harness.emit_csv(harness.BoundaryReport(), tmp_path / "missing" / "x.csv")


def test_self_comparison_is_zero():
    cfg = small_config()
    model = cfg.build_model()
    key = make_key(3, 4)
    a = harness.node_moments(model, 2, 1.0, 32, key, ("F1",), cfg)
    b = harness.node_moments(model, 2, 1.0, 32, key, ("F1",), cfg)
    assert harness.compare_moments(a, b, "F1")[0] == 0.0


def test_threads_do_not_change_moments():
    model = get_model("allen-cahn")
    key = make_key(5, 6)
    a = harness.node_moments(model, 2, 1.0, 50, key, ("F1", "F2"), small_config(threads=1))
    b = harness.node_moments(model, 2, 1.0, 50, key, ("F1", "F2"), small_config(threads=4))
    for k in ("F1", "F2"):
        assert np.array_equal(a.sums[k], b.sums[k])
        assert np.array_equal(a.squares[k], b.squares[k])


def test_independent_runs_agree_within_noise():
    cfg = small_config()
    model = cfg.build_model()
    a = harness.node_moments(model, 2, 1.0, 400, make_key(1, 1), ("F1",), cfg)
    b = harness.node_moments(model, 2, 1.0, 400, make_key(2, 1), ("F1",), cfg)
    diff = np.abs(a.mean("F1") - b.mean("F1"))
    se = np.sqrt(a.variance("F1") / 400 + b.variance("F1") / 400)
    assert np.all(diff <= 4.5 * se + 1e-15)


def test_standard_error_scales():
    cfg = small_config()
    model = cfg.build_model()
    ref = harness.node_moments(model, 2, 1.0, 2000, make_key(9, 9), ("F1",), cfg)
    small = harness.node_moments(model, 2, 1.0, 500, make_key(1, 2), ("F1",), cfg)
    large = harness.node_moments(model, 2, 1.0, 1000, make_key(1, 2), ("F1",), cfg)
    se_small = np.sqrt(small.variance("F1") / 500)
    se_large = np.sqrt(large.variance("F1") / 1000)
    ratio = np.median(se_large[1:] / se_small[1:])
    assert ratio == pytest.approx(1 / math.sqrt(2), rel=0.1)
    assert harness.compare_moments(small, ref, "F1")[1] > 0


def test_restrict_picks_shared_nodes():
    cfg = small_config()
    fine = harness.node_moments(get_model("sis"), 3, 1.0, 8, make_key(0, 1), ("F1",), cfg,
                                record_level=3)
    coarse = fine.restrict(1)
    assert coarse.sums["F1"].shape == (5, 1)
    assert np.array_equal(coarse.sums["F1"], fine.sums["F1"][::16, 3::4])
    with pytest.raises(ValueError):
        coarse.restrict(2)


def test_weak_error_experiment_small():
    reports = harness.weak_error_experiments(small_config(test_function=("F1", "F2")))
    assert set(reports) == {"F1", "F2"}
    for rep in reports.values():
        assert [r["level"] for r in rep.rows] == [1, 2]
        assert all(r["weak_error"] >= 0 and r["std_error"] > 0 for r in rep.rows)
        assert all(math.isnan(r["wall_seconds"]) for r in rep.rows)
    buf = io.StringIO()
    harness.write_csv(reports["F1"], buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == ",".join(harness.WeakErrorReport.HEADER)
    assert lines[-1].startswith("# slope=")


def test_non_nesting_levels_rejected():
    with pytest.raises(ValueError):
        harness.weak_error_experiments(small_config(levels=(2, 3), reference_level=3))


def test_config_json_and_overrides(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"model": "sis", "lambda": [1, 2], "scheme": "em,sem",
                                "samples": 10, "ref_level": 6}))
    cfg = harness.ExperimentConfig.from_json(path, samples=30, seed=None)
    assert cfg.model == "sis" and cfg.lambdas == (1.0, 2.0)
    assert cfg.schemes == ("em", "sem")
    assert cfg.samples == 30 and cfg.reference_level == 6 and cfg.seed == 0
    path.write_text(json.dumps({"colour": "red"}))
    with pytest.raises(ValueError):
        harness.ExperimentConfig.from_json(path)
    with pytest.raises(ValueError):
        harness.ExperimentConfig(lambdas=(-1,))
    with pytest.raises(ValueError):
        harness.ExperimentConfig(schemes=("rk4",))


def test_exactsim_check_small():
    res = harness.exactsim_check(get_model("sis"), x0=0.2, dt=0.05, samples=4000, h=1e-3, seed=2)
    assert {"mean_z", "var_z", "ks"} <= set(res)
    assert abs(res["mean_z"]) < 5 and abs(res["var_z"]) < 5


def test_cli_simulate(tmp_path):
    out = tmp_path / "path.csv"
    rc = main(["simulate", "--model", "nagumo", "--scheme", "lte", "--lambda", "1",
               "--dx", "0.25", "--dt", "0.25", "--T", "1", "--seed", "3", "--out", str(out)])
    assert rc == 0
    rows = list(csv.reader(out.open()))
    assert rows[0] == ["t", "x", "value"]
    assert len(rows) == 1 + 5 * 5
    values = np.array([float(r[2]) for r in rows[1:]])
    assert np.all((values >= 0) & (values <= 1))
    assert float(rows[1][2]) == 0.5


def test_cli_boundary_stdout(capsys):
    rc = main(["boundary-table", "--model", "sis", "--scheme", "lte", "--lambda", "2",
               "--samples", "5"])
    assert rc == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("model,scheme,lambda")
    assert lines[1].split(",")[-1] == "5"


def test_cli_weak_error_two_functions(tmp_path):
    out = tmp_path / "w.csv"
    rc = main(["weak-error", "--model", "sis", "--levels", "1", "--ref-level", "2",
               "--samples", "8", "--test-function", "F1,F2", "--out", str(out)])
    assert rc == 0
    assert (tmp_path / "w_F1.csv").exists() and (tmp_path / "w_F2.csv").exists()


def test_cli_errors(capsys):
    assert main(["weak-error", "--levels", "3", "--ref-level", "2", "--samples", "4"]) == 2
    assert "error:" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        main(["simulate", "--model", "fisher"])
