import csv
import filecmp
import json
import math
from pathlib import Path

import numpy as np
import pytest

from ecodyn.cli import main


def write_params(path: Path, payload: dict):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def read_csv_rows(path: Path):
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(lines))


LOGISTIC_PARAMS = {
    "kind": "null",
    "growth": [0.1],
    "self_limitation": [1.0],
    "initial": [0.1],
}


class TestSimulate:
    def test_logistic_reference_value(self, tmp_path):
        params = tmp_path / "params.json"
        write_params(params, LOGISTIC_PARAMS)
        out = tmp_path / "out"
        code = main(["--out", str(out), "simulate", "--params", str(params),
                     "--t0", "0", "--t1", "10"])
        assert code == 0
        rows = read_csv_rows(out / "trajectory.csv")
        n10 = float(rows[-1]["act0"])
        exact = 0.1 * math.e / (1.0 + 0.1 * (math.e - 1.0))
        assert abs(n10 - exact) < 1e-6
        assert abs(n10 - 0.231976) < 1e-5

    def test_sigma_zero_matches_noiseless_values(self, tmp_path):
        params = tmp_path / "params.json"
        write_params(params, LOGISTIC_PARAMS)
        out_a = tmp_path / "a"
        out_b = tmp_path / "b"
        assert main(["--out", str(out_a), "simulate", "--params", str(params),
                     "--t1", "10"]) == 0
        assert main(["--out", str(out_b), "simulate", "--params", str(params),
                     "--t1", "10", "--sigma", "0"]) == 0
        traj_a = read_csv_rows(out_a / "trajectory.csv")
        traj_b = read_csv_rows(out_b / "trajectory.csv")
        data_b = read_csv_rows(out_b / "dataset.csv")
        assert traj_a == traj_b
        assert [r["act0"] for r in data_b] == [r["act0"] for r in traj_b]

    def test_same_seed_byte_identical(self, tmp_path):
        params = tmp_path / "params.json"
        write_params(params, LOGISTIC_PARAMS)
        out_a = tmp_path / "a"
        out_b = tmp_path / "b"
        args = ["--seed", "5", "simulate", "--params", str(params),
                "--t1", "10", "--sigma", "0.2"]
        assert main(["--out", str(out_a)] + args) == 0
        assert main(["--out", str(out_b)] + args) == 0
        for name in ("trajectory.csv", "dataset.csv"):
            assert filecmp.cmp(out_a / name, out_b / name, shallow=False)

    def test_general_model_simulation(self, tmp_path):
        params = tmp_path / "params.json"
        write_params(params, {
            "kind": "general",
            "countries": [
                {"growth": [0.1], "self_limitation": [1.0],
                 "interaction_matrix": [[0.0]],
                 "dispersal_rates": [[0.0], [0.01]],
                 "transfer_matrix": [[0.0]]},
                {"growth": [0.08], "self_limitation": [0.8],
                 "interaction_matrix": [[0.0]],
                 "dispersal_rates": [[0.01], [0.0]],
                 "transfer_matrix": [[0.0]]},
            ],
            "initial": [[0.1], [0.2]],
        })
        out = tmp_path / "out"
        assert main(["--out", str(out), "simulate", "--params", str(params),
                     "--t1", "5"]) == 0
        rows = read_csv_rows(out / "trajectory.csv")
        assert set(rows[0]) == {"year", "country0_act0", "country1_act0"}

    def test_blowup_exits_three(self, tmp_path):
        params = tmp_path / "params.json"
        write_params(params, {
            "kind": "alpha_pos",
            "growth": [5.0, 5.0],
            "self_limitation": [1e-6, 1e-6],
            "coupling": 10.0,
            "initial": [5.0, 5.0],
        })
        code = main(["--out", str(tmp_path / "out"), "simulate",
                     "--params", str(params), "--t1", "200"])
        assert code == 3


class TestExitCodes:
    def test_usage_error(self):
        assert main(["simulate"]) == 1  # missing required --params

    def test_unknown_model_kind(self, tmp_path):
        params = tmp_path / "p.json"
        write_params(params, LOGISTIC_PARAMS)
        assert main(["fit", "--data", str(tmp_path), "--models", "bogus"]) in (1, 2)

    def test_missing_input_file(self, tmp_path):
        assert main(["--out", str(tmp_path / "o"), "ingest",
                     "--exports", str(tmp_path / "nope.csv"),
                     "--population", str(tmp_path / "nope2.csv")]) == 2


@pytest.fixture(scope="module")
def pipeline_run(tmp_path_factory, trade_fixture):
    """ingest -> fit -> select -> report, once per module."""
    out = tmp_path_factory.mktemp("pipeline")
    fit_flags = ["--segment-length", "20", "--adam-epochs", "50",
                 "--bfgs-epochs", "50", "--runs", "1"]
    codes = {}
    codes["ingest"] = main([
        "--out", str(out), "--seed", "7", "ingest",
        "--exports", str(trade_fixture["exports"]),
        "--population", str(trade_fixture["population"]),
        "--min-years", "10",
    ])
    codes["fit"] = main(["--out", str(out), "--seed", "7", "fit",
                         "--data", str(out)] + fit_flags)
    codes["select"] = main(["--out", str(out), "--seed", "7", "select",
                            "--fits", str(out)])
    codes["report"] = main(["--out", str(out), "--seed", "7", "report",
                            "--selection", str(out),
                            "--gdp", str(trade_fixture["gdp"])])
    return out, codes


class TestPipelineEndToEnd:
    def test_all_stages_succeed(self, pipeline_run):
        _, codes = pipeline_run
        assert codes == {"ingest": 0, "fit": 0, "select": 0, "report": 0}

    def test_ingest_filters(self, pipeline_run):
        out, _ = pipeline_run
        with open(out / "manifest.json", encoding="utf-8") as fh:
            manifest = json.load(fh)
        assert sorted(manifest["countries_kept"]) == ["AAA", "BBB", "CCC", "DDD"]
        dropped = {(d["country"], d["activity"])
                   for d in manifest["dropped_activities"]}
        # the 3-year RCA bump fails the 4-year filter; z never exceeds RCA 1
        assert ("AAA", "y") in dropped
        assert ("AAA", "z") in dropped
        with open(out / "datasets" / "AAA.json", encoding="utf-8") as fh:
            aaa = json.load(fh)
        assert aaa["activity_labels"] == ["w", "x"]
        assert len(aaa["years"]) == 25

    def test_fit_skips_short_country_with_reason(self, pipeline_run):
        out, _ = pipeline_run
        with open(out / "fit_summary.json", encoding="utf-8") as fh:
            summary = json.load(fh)
        skipped = {s["country"]: s["reason"] for s in summary["skipped"]}
        assert "DDD" in skipped
        assert "below K" in skipped["DDD"]
        # BBB's z activity exists nowhere else: its dispersal fit is skipped
        assert "field unavailable" in skipped["BBB"]
        assert sorted(summary["fitted"]) == ["AAA", "BBB", "CCC"]
        assert sorted(summary["fitted"]["AAA"]) == sorted(
            ["null", "alpha_pos", "alpha_neg", "delta", "mu"]
        )
        assert "delta" not in summary["fitted"]["BBB"]

    def test_models_flag_filters(self, pipeline_run, tmp_path):
        out, _ = pipeline_run
        solo = tmp_path / "solo"
        assert main(["--out", str(solo), "--seed", "7", "fit",
                     "--data", str(out), "--models", "null",
                     "--countries", "AAA",
                     "--adam-epochs", "20", "--bfgs-epochs", "20",
                     "--runs", "1"]) == 0
        fits = sorted(p.name for p in (solo / "fits").glob("*.json"))
        assert fits == ["AAA__null.json"]

    def test_selection_report_complete(self, pipeline_run):
        out, _ = pipeline_run
        with open(out / "selection.json", encoding="utf-8") as fh:
            selection = json.load(fh)
        assert len(selection["countries"]) == 3
        for country in selection["countries"]:
            expected = 4 if country["country"] == "BBB" else 5
            assert len(country["entries"]) == expected
            deltas = [e["delta_bic"] for e in country["entries"]]
            assert min(deltas) == 0.0
            assert country["best_model_r_squared"] > 0
        agg = selection["aggregate"]
        assert sum(agg["best_model_counts"].values()) == 3
        assert agg["best_r2_median"] is not None

    def test_regressions_emitted(self, pipeline_run):
        out, _ = pipeline_run
        with open(out / "regressions.json", encoding="utf-8") as fh:
            regs = json.load(fh)
        by_name = {r["name"]: r for r in regs["regressions"]}
        reg1 = by_name["log_likelihood~nt (standardized)"]
        assert reg1["status"] == "ok"
        assert reg1["n_obs"] == 3
        # three observations cannot support intercept + 2 predictors
        assert "skipped" in by_name["residuals~n+log_gdp (standardized)"]["status"]
        scatter = read_csv_rows(out / "scatter.csv")
        assert len(scatter) == 3

    def test_rerun_is_byte_identical(self, pipeline_run, tmp_path_factory,
                                     trade_fixture):
        out, _ = pipeline_run
        redo = tmp_path_factory.mktemp("pipeline_redo")
        fit_flags = ["--segment-length", "20", "--adam-epochs", "50",
                     "--bfgs-epochs", "50", "--runs", "1"]
        assert main(["--out", str(redo), "--seed", "7", "ingest",
                     "--exports", str(trade_fixture["exports"]),
                     "--population", str(trade_fixture["population"]),
                     "--min-years", "10"]) == 0
        assert main(["--out", str(redo), "--seed", "7", "fit",
                     "--data", str(redo)] + fit_flags) == 0
        assert main(["--out", str(redo), "--seed", "7", "select",
                     "--fits", str(redo)]) == 0
        assert main(["--out", str(redo), "--seed", "7", "report",
                     "--selection", str(redo),
                     "--gdp", str(trade_fixture["gdp"])]) == 0
        for rel in ("manifest.json", "fit_summary.json", "selection.json",
                    "selection.csv", "regressions.json", "regressions.csv",
                    "scatter.csv"):
            assert filecmp.cmp(out / rel, redo / rel, shallow=False), rel
        fits_a = sorted((out / "fits").glob("*.json"))
        fits_b = sorted((redo / "fits").glob("*.json"))
        assert [p.name for p in fits_a] == [p.name for p in fits_b]
        for a, b in zip(fits_a, fits_b):
            assert filecmp.cmp(a, b, shallow=False), a.name

    def test_collinear_gdp_surfaces_rank_deficiency(self, pipeline_run, tmp_path):
        out, _ = pipeline_run
        gdp = tmp_path / "gdp_const.csv"
        with open(gdp, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["country_code", "gdp"])
            for c in ("AAA", "BBB", "CCC"):
                writer.writerow([c, 1e11])
        redo = tmp_path / "rep"
        assert main(["--out", str(redo), "--seed", "7", "report",
                     "--selection", str(out), "--gdp", str(gdp)]) == 0
        with open(redo / "regressions.json", encoding="utf-8") as fh:
            regs = json.load(fh)
        statuses = {r["name"]: r["status"] for r in regs["regressions"]}
        assert any("skipped" in s for s in statuses.values())


class TestConfigFile:
    def test_config_file_supplies_flags(self, tmp_path):
        params = tmp_path / "p.json"
        write_params(params, LOGISTIC_PARAMS)
        cfg = tmp_path / "run.json"
        with open(cfg, "w", encoding="utf-8") as fh:
            json.dump({"params": str(params), "t1": 10, "seed": 3}, fh)
        out = tmp_path / "out"
        assert main(["--out", str(out), "--config", str(cfg), "simulate"]) == 0
        assert (out / "trajectory.csv").exists()

    def test_cli_flag_overrides_config(self, tmp_path):
        params = tmp_path / "p.json"
        write_params(params, LOGISTIC_PARAMS)
        cfg = tmp_path / "run.json"
        with open(cfg, "w", encoding="utf-8") as fh:
            json.dump({"params": str(params), "t1": 3}, fh)
        out = tmp_path / "out"
        assert main(["--out", str(out), "--config", str(cfg), "simulate",
                     "--t1", "10"]) == 0
        rows = read_csv_rows(out / "trajectory.csv")
        assert len(rows) == 11
