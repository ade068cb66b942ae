import json

import numpy as np
import pandas as pd
import pytest
from click.testing import CliRunner

from cohortfx.cli import main as cli_main
from cohortfx.pipeline import (
    PipelineConfig,
    RawTables,
    StageError,
    read_raw_tables,
    run_analysis,
    run_pipeline,
    write_outputs,
)
from cohortfx.report import emit_report, forest_frame, summary_markdown
from cohortfx.synth import generate_cohort, scenario_spec, write_cohort_files


@pytest.fixture(scope="module")
def steroid_cohort():
    return generate_cohort(scenario_spec("steroid", n=700), seed=21)


@pytest.fixture(scope="module")
def steroid_tables(steroid_cohort):
    c = steroid_cohort
    return RawTables(c.patients, c.vitals, c.med_events, c.organ_support, c.outcomes)


@pytest.fixture(scope="module")
def steroid_result(steroid_tables):
    cfg = PipelineConfig(analysis="steroid", seed=5, select_covariates=False)
    return run_analysis(steroid_tables, cfg)


@pytest.fixture(scope="module")
def run_dir(steroid_result, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    cfg = PipelineConfig(analysis="steroid", seed=5, select_covariates=False, out_dir=str(out))
    write_outputs(steroid_result, cfg, out)
    return out


class TestPipelineConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            PipelineConfig(analysis="nope")
        with pytest.raises(ValueError):
            PipelineConfig(caliper_unit="feet")
        with pytest.raises(ValueError):
            PipelineConfig(ratio=0)

    def test_ac_keep_list_includes_ddimer(self):
        cfg = PipelineConfig(analysis="ac")
        assert "l36_d_dimer" in cfg.effective_keep_list()
        cfg2 = PipelineConfig(analysis="steroid")
        assert "l36_d_dimer" not in cfg2.effective_keep_list()


class TestRunAnalysis:
    def test_three_estimators_present(self, steroid_result):
        assert set(steroid_result.estimates) == {"unadjusted", "regression", "matched"}

    def test_steroid_sign_pattern(self, steroid_result):
        # sicker patients get treated: raw negative, adjusted positive
        assert steroid_result.estimates["unadjusted"].point < 0
        assert steroid_result.estimates["matched"].point > 0

    def test_steroid_regression_near_truth_scale(self):
        # regression adjustment should land near the +1.35 ground truth,
        # not merely flip the sign
        points = []
        for seed in (101, 102, 103):
            cohort = generate_cohort(scenario_spec("steroid"), seed=seed)
            tables = RawTables(
                cohort.patients, cohort.vitals, cohort.med_events, cohort.organ_support, cohort.outcomes
            )
            res = run_analysis(tables, PipelineConfig(analysis="steroid", select_covariates=False))
            points.append(res.estimates["regression"].point)
            assert res.estimates["regression"].point > 0
        assert abs(float(np.mean(points)) - 1.35) < 0.75

    def test_ci_brackets_point(self, steroid_result):
        for est in steroid_result.estimates.values():
            assert est.ci95[0] <= est.point <= est.ci95[1]

    def test_propensity_overlap_right_shifted(self, steroid_result):
        ps = steroid_result.propensity
        arms = steroid_result.arms
        ps_t = np.mean([ps[p] for p in ps.index if arms[p] == "treated"])
        ps_c = np.mean([ps[p] for p in ps.index if arms[p] == "control"])
        assert ps_t > ps_c

    def test_balance_improves_on_confounded_data(self, steroid_result):
        b = steroid_result.balance
        assert b["smd_post"].abs().max() <= b["smd_pre"].abs().max()

    def test_missing_input_tagged_load_stage(self, tmp_path):
        cfg = PipelineConfig(analysis="steroid", in_dir=str(tmp_path / "nowhere"))
        with pytest.raises(StageError) as err:
            run_pipeline(cfg)
        assert err.value.stage == "load"
        assert err.value.exit_code == 2


class TestOutputsAndReport:
    def test_all_artifacts_written(self, run_dir):
        expected = {
            "effects.json",
            "balance.csv",
            "propensity_hist.csv",
            "matched_pairs.csv",
            "cohort_steroid.csv",
            "preprocess_log.json",
            "run_meta.json",
        }
        assert expected <= {p.name for p in run_dir.iterdir()}

    def test_effects_json_shape(self, run_dir):
        payload = json.loads((run_dir / "effects.json").read_text())
        assert payload["analysis"] == "steroid"
        assert set(payload["estimates"]) == {"unadjusted", "regression", "matched"}
        for est in payload["estimates"].values():
            assert est["ci95"]["lo"] <= est["point"] <= est["ci95"]["hi"]
        meta = payload["meta"]
        for key in ("seed", "caliper", "caliper_unit", "window_hours", "matched_fraction", "version"):
            assert key in meta

    def test_balance_csv_columns(self, run_dir):
        frame = pd.read_csv(run_dir / "balance.csv")
        assert list(frame.columns) == ["covariate", "smd_pre", "smd_post"]

    def test_matched_pairs_schema(self, run_dir):
        frame = pd.read_csv(run_dir / "matched_pairs.csv")
        assert list(frame.columns) == ["treated_id", "control_id", "distance", "weight"]
        assert (frame["weight"] > 0).all()

    def test_cohort_csv_has_reason_codes(self, run_dir):
        frame = pd.read_csv(run_dir / "cohort_steroid.csv")
        assert list(frame.columns) == ["patient_id", "arm", "reason", "osfd21"]
        assert frame["osfd21"].between(-1, 21).all()

    def test_report_files(self, run_dir):
        paths = emit_report(run_dir)
        forest = pd.read_csv(run_dir / "forest.csv")
        assert list(forest.columns) == ["analysis", "estimator", "point", "lo", "hi"]
        assert len(forest) == 3
        assert (forest["lo"] <= forest["point"]).all() and (forest["point"] <= forest["hi"]).all()
        summary = (run_dir / "summary.md").read_text()
        assert "treated" in summary and "dropped" in summary
        for fig in ("forest.png", "balance.png", "overlap.png"):
            assert (run_dir / fig).stat().st_size > 1000

    def test_summary_mentions_matched_drop_percentage(self, run_dir):
        payload = json.loads((run_dir / "effects.json").read_text())
        text = summary_markdown(payload)
        assert "approximately" in text

    def test_report_requires_effects(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            emit_report(tmp_path)

    def test_forest_frame_orders_estimators(self, run_dir):
        payload = json.loads((run_dir / "effects.json").read_text())
        frame = forest_frame(payload)
        assert list(frame["estimator"]) == ["unadjusted", "regression", "matched"]


class TestDeterminismAndPermutation:
    def test_identical_config_seed_byte_identical(self, steroid_tables, tmp_path):
        outs = []
        for name in ("r1", "r2"):
            cfg = PipelineConfig(analysis="steroid", seed=9, select_covariates=False, out_dir=str(tmp_path / name))
            res = run_analysis(steroid_tables, cfg)
            write_outputs(res, cfg, tmp_path / name)
            outs.append(tmp_path / name)
        for fname in ("effects.json", "balance.csv", "propensity_hist.csv", "matched_pairs.csv"):
            assert (outs[0] / fname).read_bytes() == (outs[1] / fname).read_bytes(), fname

    def test_row_permutation_invariance(self, steroid_cohort, tmp_path):
        rng = np.random.default_rng(3)
        shuffled = RawTables(
            steroid_cohort.patients.sample(frac=1.0, random_state=1).reset_index(drop=True),
            steroid_cohort.vitals.sample(frac=1.0, random_state=2).reset_index(drop=True),
            steroid_cohort.med_events.sample(frac=1.0, random_state=3).reset_index(drop=True),
            steroid_cohort.organ_support.sample(frac=1.0, random_state=4).reset_index(drop=True),
            steroid_cohort.outcomes.sample(frac=1.0, random_state=5).reset_index(drop=True),
        )
        original = RawTables(
            steroid_cohort.patients,
            steroid_cohort.vitals,
            steroid_cohort.med_events,
            steroid_cohort.organ_support,
            steroid_cohort.outcomes,
        )
        results = []
        for name, tables in (("a", original), ("b", shuffled)):
            cfg = PipelineConfig(analysis="steroid", seed=4, select_covariates=False, out_dir=str(tmp_path / name))
            res = run_analysis(tables, cfg)
            write_outputs(res, cfg, tmp_path / name)
            results.append(tmp_path / name)
        assert (results[0] / "effects.json").read_bytes() == (results[1] / "effects.json").read_bytes()


class TestCli:
    def test_simulate_analyze_report_sweep(self, tmp_path):
        runner = CliRunner()
        data = tmp_path / "data"
        out = tmp_path / "out"
        r = runner.invoke(cli_main, ["simulate", "--scenario", "steroid", "--n", "600", "--seed", "1", "--out-dir", str(data), "--no-oracle"])
        assert r.exit_code == 0, r.output
        assert (data / "truth.json").exists()

        r = runner.invoke(
            cli_main,
            ["analyze", "--analysis", "steroid", "--in-dir", str(data), "--out-dir", str(out), "--seed", "2", "--no-select-covariates"],
        )
        assert r.exit_code == 0, r.output
        assert "matched" in r.output
        assert (out / "effects.json").exists()

        r = runner.invoke(cli_main, ["report", str(out)])
        assert r.exit_code == 0, r.output
        assert (out / "forest.csv").exists()

        ac_data = tmp_path / "ac_data"
        r = runner.invoke(cli_main, ["simulate", "--scenario", "ac", "--seed", "2", "--out-dir", str(ac_data), "--no-oracle"])
        assert r.exit_code == 0, r.output
        r = runner.invoke(
            cli_main,
            ["sweep", "--analysis", "ac", "--in-dir", str(ac_data), "--out-dir", str(tmp_path / "sweep"), "--seed", "2", "--windows", "48,72"],
        )
        assert r.exit_code == 0, r.output
        sweep = pd.read_csv(tmp_path / "sweep" / "sweep.csv")
        assert set(sweep["window_hours"]) == {48.0, 72.0}
        assert (tmp_path / "sweep" / "sweep.png").exists()

    def test_config_file_with_flag_override(self, tmp_path):
        runner = CliRunner()
        data = tmp_path / "data"
        write_cohort_files(generate_cohort(scenario_spec("steroid", n=600), seed=3), data)
        config = tmp_path / "run.toml"
        config.write_text(
            f'analysis = "steroid"\nin_dir = "{data}"\nout_dir = "{tmp_path / "cfg_out"}"\n'
            "seed = 7\nratio = 3\n"
        )
        out_override = tmp_path / "flag_out"
        r = runner.invoke(
            cli_main,
            ["analyze", "--config", str(config), "--out-dir", str(out_override), "--no-select-covariates"],
        )
        assert r.exit_code == 0, r.output
        assert (out_override / "effects.json").exists()
        meta = json.loads((out_override / "run_meta.json").read_text())
        assert meta["config"]["seed"] == 7  # from file
        assert meta["config"]["out_dir"] == str(out_override)  # flag wins

    def test_bad_config_key_rejected(self, tmp_path):
        runner = CliRunner()
        config = tmp_path / "bad.toml"
        config.write_text('analysis = "steroid"\nwibble = 3\n')
        r = runner.invoke(cli_main, ["analyze", "--config", str(config)])
        assert r.exit_code != 0

    def test_report_on_empty_dir_fails_cleanly(self, tmp_path):
        runner = CliRunner()
        r = runner.invoke(cli_main, ["report", str(tmp_path)])
        assert r.exit_code == 1

    def test_log_env_var_respected(self, tmp_path, monkeypatch):
        monkeypatch.setenv("COHORTFX_LOG", "debug")
        runner = CliRunner()
        data = tmp_path / "data"
        r = runner.invoke(cli_main, ["simulate", "--scenario", "steroid", "--n", "300", "--seed", "1", "--out-dir", str(data), "--no-oracle"])
        assert r.exit_code == 0


class TestReadRawTables:
    def test_round_trip(self, steroid_cohort, tmp_path):
        write_cohort_files(steroid_cohort, tmp_path)
        tables = read_raw_tables(tmp_path)
        assert tables.outcomes["died"].dtype == bool
        assert len(tables.patients) == 700

    def test_missing_file_raises(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            read_raw_tables(tmp_path)
