import csv
import shutil
from dataclasses import replace

import numpy as np
import pytest

from cslsm.cli import apply_thread_limit, main
from cslsm.errors import ConfigError
from cslsm.harness import (
    ALL_CELLS,
    RESULT_COLUMNS,
    ExperimentPlan,
    MeasurementCache,
    ground_truth,
    parse_config,
    read_results,
    run_experiment,
)
from cslsm.phantom import PhantomSpec
from cslsm.volume import read_measurements, read_volume

SMALL = """\
# tiny plan
nx = 24
ny = 24
nz = 20
nuclei = 6
frames = 20
methods = tikhonov:slice
ratio = 4
noise = 0
params = explicit
output_dir = out
"""


def write_cfg(tmp_path, text, name="plan.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_minimal_config_defaults(tmp_path):
    plan = parse_config(write_cfg(tmp_path, "# nothing but defaults\n"))
    assert plan.methods == ALL_CELLS and len(plan.methods) == 6
    assert plan.ratios == (2, 4, 10, 20) and plan.noise == (0.0, 1e-3)
    assert plan.params == "tuned" and plan.budget == 50 and plan.frames == 40
    assert plan.phantom == PhantomSpec()
    assert plan.output_dir == (tmp_path / "results").resolve()


def test_paths_relative_to_config(tmp_path):
    sub = tmp_path / "cfg"
    sub.mkdir()
    plan = parse_config(write_cfg(sub, "output_dir = ../res\nphantom_file = vol.cslv\n"))
    assert plan.output_dir == (tmp_path / "res").resolve()
    assert plan.phantom_file == (sub / "vol.cslv").resolve()


def test_method_shorthand(tmp_path):
    plan = parse_config(write_cfg(tmp_path, "methods = bm3d, tv:temporal\n"))
    assert plan.methods == (("bm3d", "slice"), ("bm3d", "temporal"), ("tv", "temporal"))


@pytest.mark.parametrize("text,match", [
    ("ratio = 4\nratio = 2\n", r"plan.cfg:2: duplicate key"),
    ("ratio = 7\n", r"plan.cfg:1: .*7 does not divide"),
    ("budget = many\n", r"plan.cfg:1: bad value"),
    ("# ok\nbudget 5\n", r"plan.cfg:2: malformed"),
    ("colour = red\n", r"unknown key 'colour'; valid keys: .*budget"),
    ("methods = fista:slice\n", r"unknown method"),
    ("params = guessed\n", r"plan.cfg:1: bad value"),
])
def test_config_errors(tmp_path, text, match):
    with pytest.raises(ConfigError, match=match):
        parse_config(write_cfg(tmp_path, text))


def test_plan_invariants():
    with pytest.raises(ConfigError):
        ExperimentPlan(methods=())
    with pytest.raises(ConfigError):
        ExperimentPlan(ratios=(3,))


def test_single_cell_csv(tmp_path):
    plan = parse_config(write_cfg(tmp_path, SMALL))
    rows = run_experiment(plan)
    assert len(rows) == 1 and rows[0]["status"] == "ok"
    with open(plan.output_dir / "results.csv", newline="") as fh:
        lines = list(csv.reader(fh))
    assert lines[0] == RESULT_COLUMNS and len(lines) == 2
    assert (plan.output_dir / "slices" / "tikhonov_slice_R4_clean_z17.pgm").exists()
    row = read_results(plan.output_dir / "results.csv")[0]
    assert (row["phantom_seed"], row["mask_seed"], row["noise_seed"]) == ("0", "20240101", "7")


def test_rerun_overwrites_and_reproduces(tmp_path):
    plan = parse_config(write_cfg(tmp_path, SMALL.replace("methods = tikhonov:slice", "methods = tikhonov, tv")))
    run_experiment(plan)
    first = (plan.output_dir / "results.csv").read_text()
    run_experiment(plan)
    assert (plan.output_dir / "results.csv").read_text() == first
    assert len(read_results(plan.output_dir / "results.csv")) == 4


def test_rows_merge_across_plans(tmp_path):
    plan = parse_config(write_cfg(tmp_path, SMALL))
    run_experiment(plan)
    run_experiment(replace(plan, ratios=(2,)))
    rows = read_results(plan.output_dir / "results.csv")
    assert sorted(r["ratio"] for r in rows) == ["2", "4"]


def test_cache_hit_matches_miss(tmp_path):
    plan = replace(parse_config(write_cfg(tmp_path, SMALL)), noise=(1e-3,))
    truth = ground_truth(plan)
    cache = MeasurementCache(tmp_path / "cache", plan.phantom.seed)
    ms1, m1 = cache.get(truth, plan, 4, 1e-3)
    ms2, m2 = cache.get(truth, plan, 4, 1e-3)
    assert (cache.misses, cache.hits) == (1, 1)
    assert ms1 == ms2 and m1 == m2
    cache.get(truth, replace(plan, noise_seed=8), 4, 1e-3)
    cache.get(truth, plan, 2, 1e-3)
    cache.get(truth, plan, 4, 0.0)
    assert cache.misses == 4


def test_cached_and_fresh_runs_identical(tmp_path):
    plan = parse_config(write_cfg(tmp_path, SMALL))
    run_experiment(plan)
    cached = (plan.output_dir / "results.csv").read_text()
    shutil.rmtree(plan.output_dir / "cache")
    (plan.output_dir / "results.csv").unlink()
    run_experiment(plan)
    assert (plan.output_dir / "results.csv").read_text() == cached


def test_failing_cell_recorded(tmp_path):
    params = tmp_path / "params.csv"
    params.write_text("method,mode,noise_variance,lambda,rho,gamma\ntikhonov,slice,0,0.01,0.1,0\n")
    plan = parse_config(write_cfg(tmp_path, SMALL.replace("methods = tikhonov:slice", "methods = tv:slice, tikhonov:slice")
                                  + "params_file = params.csv\n"))
    rows = run_experiment(plan)
    assert rows[0]["status"].startswith("error") and rows[1]["status"] == "ok"
    assert rows[1]["lambda"] == "0.01"


def test_tuned_cell_cached(tmp_path):
    text = SMALL.replace("params = explicit", "params = tuned\nbudget = 4")
    plan = parse_config(write_cfg(tmp_path, text))
    run_experiment(plan)
    trace = plan.output_dir / "tuning" / "tikhonov_slice_R4_clean.csv"
    assert trace.read_text().splitlines()[0] == "eval,lambda,rho,gamma,psnr_db,seconds"
    assert len(trace.read_text().splitlines()) == 5
    first = (plan.output_dir / "results.csv").read_text()
    run_experiment(plan)
    assert (plan.output_dir / "results.csv").read_text() == first
    timings = read_results(plan.output_dir / "timings.csv")
    assert timings[0]["tune_cached"] == "1"


def test_cli_pipeline(tmp_path, capsys):
    vol, meas, masks = tmp_path / "v.cslv", tmp_path / "m.cslb", tmp_path / "k.cslm"
    rec, log, rep = tmp_path / "r.cslv", tmp_path / "h.csv", tmp_path / "rep.csv"
    assert main(["phantom", "--nx", "24", "--ny", "24", "--nz", "20", "--nuclei", "5", "--out", str(vol),
                 "--centers", str(tmp_path / "c.txt")]) == 0
    assert np.loadtxt(tmp_path / "c.txt").shape == (5, 3)
    assert main(["encode", "--in", str(vol), "--ratio", "4", "--noise-var", "0.001",
                 "--out", str(meas), "--masks", str(masks)]) == 0
    assert read_measurements(meas).noise_variance == 0.001
    assert main(["reconstruct", "--meas", str(meas), "--masks", str(masks), "--denoiser", "tv",
                 "--lambda", "0.05", "--rho", "0.1", "--gamma", "0.01", "--tv-inner-iters", "10",
                 "--max-iters", "5", "--out", str(rec), "--log", str(log)]) == 0
    lines = log.read_text().splitlines()
    assert lines[0] == "iter,rel_change,primal_residual,data_misfit,seconds" and len(lines) <= 6
    assert main(["evaluate", "--ref", str(vol), "--test", str(rec), "--out", str(rep)]) == 0
    assert read_volume(rec).nz == 20
    assert rep.read_text().startswith("method,ratio,psnr_db,ssim,iterations,seconds")
    tune_out = tmp_path / "tune.csv"
    assert main(["tune", "--meas", str(meas), "--masks", str(masks), "--truth", str(vol),
                 "--denoiser", "tikhonov", "--temporal", "--budget", "4", "--out", str(tune_out)]) == 0
    assert len(tune_out.read_text().splitlines()) == 5
    assert main(["version"]) == 0
    assert "cslsm" in capsys.readouterr().out


def test_cli_exit_codes(tmp_path, monkeypatch):
    assert main(["encode", "--in", str(tmp_path / "missing.cslv"), "--ratio", "4",
                 "--out", "a", "--masks", "b"]) == 4
    bad = tmp_path / "bad.cslv"
    bad.write_bytes(b"XXXX\x01")
    assert main(["evaluate", "--ref", str(bad), "--test", str(bad), "--out", str(tmp_path / "r")]) == 4
    vol = tmp_path / "v.cslv"
    main(["phantom", "--nx", "24", "--ny", "24", "--nz", "20", "--nuclei", "2", "--out", str(vol)])
    assert main(["encode", "--in", str(vol), "--ratio", "3", "--out", "a", "--masks", "b"]) == 2
    assert main(["sweep", str(write_cfg(tmp_path, "ratio = 7\n"))]) == 2
    monkeypatch.setenv("CSLSM_THREADS", "-1")
    assert main(["version"]) == 2


def test_cli_sweep(tmp_path):
    cfg = write_cfg(tmp_path, SMALL)
    assert main(["sweep", str(cfg), "--export-slice", "3", "--output-dir", str(tmp_path / "o")]) == 0
    assert (tmp_path / "o" / "slices" / "tikhonov_slice_R4_clean_z3.pgm").exists()


def test_thread_limit():
    assert apply_thread_limit({}) == 0
    assert apply_thread_limit({"CSLSM_THREADS": "1"}) == 1
    with pytest.raises(ConfigError):
        apply_thread_limit({"CSLSM_THREADS": "two"})
