import csv
import json
import math
from pathlib import Path

import pytest

from kstgcn.cli import main
from kstgcn.runner import (MODES, Cell, ConfigError, ExperimentConfig, cells_for, export_plotdata, fingerprint,
                           median_by_x, read_plotdata, read_results, run)

from helpers import tiny_experiment

GOLDEN = Path(__file__).parent / "golden"


def write_config(cfg, path):
    path.write_text(json.dumps(cfg.to_dict(), default=list))
    return path


def test_cells_per_mode():
    cfg = ExperimentConfig()
    counts = {}
    for mode in MODES:
        cfg.mode = mode
        counts[mode] = [c.label for c in cells_for(cfg)]
    assert counts["ablate"] == ["knowledge=none", "knowledge=static", "knowledge=dynamic", "knowledge=both"]
    assert counts["horizon"] == [f"horizon={h}" for h in (1, 2, 3, 4)]
    assert len(counts["noise"]) == 1 + 6 + 5 and counts["noise"][0] == "noise=none"
    assert len(counts["hparam"]) == 10
    assert counts["baselines"] == ["model=ha", "model=gru_only", "model=gcn_gru", "model=kstgcn"]


def test_config_validation():
    cfg = ExperimentConfig(mode="nope")
    with pytest.raises(ConfigError, match="mode"):
        cfg.validate()
    with pytest.raises(ConfigError, match="seed"):
        ExperimentConfig(seeds=[]).validate()
    cfg = ExperimentConfig()
    cfg.grids.hidden = []
    with pytest.raises(ConfigError, match="hidden"):
        cfg.validate()
    with pytest.raises(ConfigError, match="does not exist"):
        ExperimentConfig(scenario_path="/nonexistent/dir").validate()


def test_config_json_round_trip(tmp_path):
    cfg = tiny_experiment(tmp_path, mode="noise", seeds=(3, 4))
    back = ExperimentConfig.load(write_config(cfg, tmp_path / "c.json"))
    assert back == cfg


def test_config_rejects_unknown_keys(tmp_path):
    with pytest.raises(ConfigError, match="bogus"):
        ExperimentConfig.from_dict({"bogus": 1})
    with pytest.raises(ConfigError, match="TrainConfig"):
        ExperimentConfig.from_dict({"train": {"lr": 0.1, "momentum": 0.9}})
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(ConfigError):
        ExperimentConfig.load(tmp_path / "bad.json")


def test_fingerprint_is_order_insensitive_and_content_sensitive():
    assert fingerprint({"a": 1, "b": 2}) == fingerprint({"b": 2, "a": 1})
    assert fingerprint({"a": 1}) != fingerprint({"a": 2})
    assert len(fingerprint(Cell("ablate", "x", "x"))) == 16


def test_horizon_plot_shape_contract(tmp_path):
    cfg = tiny_experiment(tmp_path, mode="horizon", seeds=(0, 1))
    assert run(cfg) == 0
    rows = read_plotdata(tmp_path / "plot_horizon.csv")
    assert len(rows) == 4 * 5 * 2
    for seed in ("0", "1"):
        mine = [r for r in rows if r["seed"] == seed]
        assert sorted({r["x"] for r in mine}) == ["1", "2", "3", "4"]
        assert len(mine) == 20
    assert list(median_by_x(rows)) == ["1", "2", "3", "4"]


def test_golden_small_run(tmp_path):
    assert run(tiny_experiment(tmp_path, mode="horizon")) == 0
    got = list(csv.reader(open(tmp_path / "plot_horizon.csv")))
    want = list(csv.reader(open(GOLDEN / "tiny_horizon_plot.csv")))
    assert got[0] == want[0] and len(got) == len(want)
    for g, w in zip(got[1:], want[1:]):
        assert (g[0], g[1], g[3]) == (w[0], w[1], w[3])
        assert float(g[2]) == pytest.approx(float(w[2]), rel=1e-9, abs=1e-12)


def test_results_rows_satisfy_metric_invariants(tmp_path):
    assert run(tiny_experiment(tmp_path, mode="ablate", seeds=(0, 1))) == 0
    rows = read_results(tmp_path / "results.csv")
    assert len(rows) == 8
    for r in rows:
        assert float(r["rmse"]) >= float(r["mae"]) >= 0
        assert float(r["accuracy"]) <= 1 and float(r["r2"]) <= 1 and float(r["var"]) <= 1
    summary = read_results(tmp_path / "summary.csv")
    assert [s["n_seeds"] for s in summary] == ["2"] * 4


def test_rerun_gives_identical_outputs(tmp_path):
    cfg = tiny_experiment(tmp_path, mode="baselines")
    assert run(cfg) == 0
    first = {p.name: p.read_bytes() for p in tmp_path.glob("*.csv")}
    assert run(cfg) == 0
    assert {p.name: p.read_bytes() for p in tmp_path.glob("*.csv")} == first
    # a fresh directory recomputes from scratch and still agrees
    other = tiny_experiment(tmp_path / "again", mode="baselines")
    assert run(other) == 0
    assert (tmp_path / "again" / "results.csv").read_bytes() == first["results.csv"]


def test_noise_sweep_emits_curves_from_the_clean_run(tmp_path):
    assert run(tiny_experiment(tmp_path, mode="noise")) == 0
    g = read_plotdata(tmp_path / "plot_noise_gaussian.csv")
    p = read_plotdata(tmp_path / "plot_noise_poisson.csv")
    assert list(median_by_x(g)) == ["0", "0.2", "1.0"]
    assert list(median_by_x(p)) == ["0", "1.0", "4.0"]


def test_hparam_sweep_emits_one_curve_per_parameter(tmp_path):
    assert run(tiny_experiment(tmp_path, mode="hparam")) == 0
    assert list(median_by_x(read_plotdata(tmp_path / "plot_hparam_d_h.csv"))) == ["4", "8"]
    assert list(median_by_x(read_plotdata(tmp_path / "plot_hparam_dim.csv"))) == ["3", "5"]


def test_baselines_cover_every_model(tmp_path):
    assert run(tiny_experiment(tmp_path, mode="baselines")) == 0
    rows = {r["cell"]: r for r in read_results(tmp_path / "results.csv")}
    assert set(rows) == {"model=ha", "model=gru_only", "model=gcn_gru", "model=kstgcn"}
    assert all(math.isfinite(float(r["rmse"])) for r in rows.values())


def test_identical_computations_share_a_cache_entry(tmp_path):
    assert run(tiny_experiment(tmp_path, mode="ablate")) == 0
    n_cells = len(list((tmp_path / "cache").glob("cell-*")))
    assert run(tiny_experiment(tmp_path, mode="baselines")) == 0
    # only ha and gru_only are new computations
    assert len(list((tmp_path / "cache").glob("cell-*"))) == n_cells + 2


def test_export_requires_results(tmp_path):
    with pytest.raises(FileNotFoundError):
        export_plotdata(tmp_path)
    (tmp_path / "results.csv").write_text("mode,cell,x,seed,rmse,mae,accuracy,r2,var\n")
    with pytest.raises(ValueError, match="no results"):
        export_plotdata(tmp_path)
    assert not list(tmp_path.glob("plot_*.csv"))


def test_failure_writes_error_log_and_nonzero_status(tmp_path):
    cfg = tiny_experiment(tmp_path, mode="ablate")
    cfg.train.window = 10_000           # no window fits: degenerate split
    assert run(cfg) == 1
    assert "degenerate" in (tmp_path / "error.log").read_text()


# -- command line ------------------------------------------------------------

def test_cli_pipeline_stages(tmp_path):
    cfg = write_config(tiny_experiment(tmp_path / "unused"), tmp_path / "c.json")
    assert main(["synth", "--config", str(cfg), "--out", str(tmp_path / "sc")]) == 0
    assert main(["build-kg", "--config", str(cfg), "--scenario", str(tmp_path / "sc"),
                 "--out", str(tmp_path / "kg")]) == 0
    assert main(["embed", "--config", str(cfg), "--kg", str(tmp_path / "kg"), "--out", str(tmp_path / "emb")]) == 0
    common = ["--config", str(cfg), "--scenario", str(tmp_path / "sc"), "--kg", str(tmp_path / "kg"),
              "--embedding", str(tmp_path / "emb")]
    assert main(["train", *common, "--out", str(tmp_path / "tr")]) == 0
    for name in ("history.csv", "metrics.csv", "model/params.bin", "model/manifest.json"):
        assert (tmp_path / "tr" / name).exists()
    assert main(["eval", *common, "--model", str(tmp_path / "tr" / "model"), "--out", str(tmp_path / "ev")]) == 0
    assert (tmp_path / "ev" / "metrics.csv").read_text() == (tmp_path / "tr" / "metrics.csv").read_text()


def test_cli_sweep_flags_override_config(tmp_path):
    cfg = write_config(tiny_experiment(tmp_path / "unused", mode="noise"), tmp_path / "c.json")
    out = tmp_path / "sw"
    assert main(["sweep", "--config", str(cfg), "--out", str(out), "--mode", "horizon", "--seeds", "2,3"]) == 0
    rows = read_results(out / "results.csv")
    assert {r["seed"] for r in rows} == {"2", "3"} and {r["mode"] for r in rows} == {"horizon"}


def test_cli_sweep_with_parallel_workers_matches_serial(tmp_path):
    cfg = write_config(tiny_experiment(tmp_path / "unused"), tmp_path / "c.json")
    assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "a"), "--jobs", "2"]) == 0
    assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "summary.csv").read_bytes() == (tmp_path / "b" / "summary.csv").read_bytes()


def test_cli_errors_exit_nonzero_with_log(tmp_path, capsys):
    (tmp_path / "c.json").write_text('{"mode": "ablate", "colour": 1}')
    assert main(["sweep", "--config", str(tmp_path / "c.json"), "--out", str(tmp_path / "o")]) == 2
    assert "colour" in capsys.readouterr().err
    assert (tmp_path / "o" / "error.log").exists()
    assert main(["build-kg", "--scenario", str(tmp_path / "missing"), "--out", str(tmp_path / "k")]) == 2


def test_cli_rejects_unknown_mode():
    with pytest.raises(SystemExit):
        main(["sweep", "--out", "x", "--mode", "bogus"])
