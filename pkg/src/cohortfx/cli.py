"""The ``cohortfx`` command: simulate, analyze, report, sweep.

A TOML config file can hold any analyze/sweep parameter; explicit CLI
flags win over config values. ``COHORTFX_LOG`` sets the log level
(debug/info/warning; default warning).
"""

from __future__ import annotations

import logging
import os
import sys
from pathlib import Path

import click
import pandas as pd

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .cohort import STANDARD_WINDOWS
from .pipeline import ANALYSES, PipelineConfig, StageError, read_raw_tables, run_analysis, run_pipeline
from .report import emit_report, render_forest_figure
from .synth import generate_cohort, oracle_att, scenario_spec, write_cohort_files

logger = logging.getLogger(__name__)


def _setup_logging():
    level_name = os.environ.get("COHORTFX_LOG", "warning").upper()
    level = getattr(logging, level_name, logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _load_config_file(path) -> dict:
    if path is None:
        return {}
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    return {k.replace("-", "_"): v for k, v in raw.items()}


def _merged_config(config_path, cli_values: dict) -> PipelineConfig:
    merged = _load_config_file(config_path)
    for key, value in cli_values.items():
        if value is not None:
            merged[key] = value
    if "keep_list" in merged and isinstance(merged["keep_list"], list):
        merged["keep_list"] = tuple(merged["keep_list"])
    try:
        return PipelineConfig(**merged)
    except TypeError as e:
        raise click.UsageError(f"bad config key: {e}") from e


@click.group()
def main():
    """Observational treatment-effect pipeline with a synthetic-cohort generator."""
    _setup_logging()


@main.command()
@click.option("--scenario", type=click.Choice(["ac", "steroid", "fxa"]), required=True)
@click.option("--n", type=int, default=None, help="cohort size (scenario default if omitted)")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out-dir", type=click.Path(), default="data", show_default=True)
@click.option("--oracle/--no-oracle", default=True, show_default=True, help="include the Monte-Carlo ground-truth effect in truth.json")
def simulate(scenario, n, seed, out_dir, oracle):
    """Generate a synthetic cohort with known ground truth."""
    spec = scenario_spec(scenario, n=n)
    cohort = generate_cohort(spec, seed=seed)
    if oracle:
        res = oracle_att(spec, n_mc=100_000, seed=seed + 1)
        cohort.truth["oracle_att"] = res.att
        cohort.truth["oracle_mc_se"] = res.mc_se
    paths = write_cohort_files(cohort, out_dir)
    click.echo(f"wrote {len(paths)} files to {out_dir} (treated {cohort.truth['treated_count']}/{spec.n})")


@main.command()
@click.option("--analysis", type=click.Choice(list(ANALYSES)), default=None)
@click.option("--in-dir", type=click.Path(exists=True, file_okay=False), default=None)
@click.option("--out-dir", type=click.Path(), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--window-hours", type=float, default=None)
@click.option("--caliper", type=float, default=None)
@click.option("--caliper-unit", type=click.Choice(["sd", "absolute"]), default=None)
@click.option("--ratio", type=int, default=None)
@click.option("--ddimer-cutoff", type=float, default=None)
@click.option("--missing-threshold", type=float, default=None)
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--select-covariates/--no-select-covariates", default=None)
def analyze(config_path, **cli_values):
    """Run the full pipeline on raw tables in --in-dir."""
    config = _merged_config(config_path, cli_values)
    try:
        result, paths = run_pipeline(config)
    except StageError as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(e.exit_code)
    for name, est in sorted(result.estimates.items()):
        click.echo(
            f"{config.analysis} {name}: {est.point:+.2f} days "
            f"[{est.ci95[0]:+.2f}, {est.ci95[1]:+.2f}] p={est.p_value:.3f}"
        )
    click.echo(f"artifacts in {config.out_dir}")


@main.command()
@click.argument("run_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--out-dir", type=click.Path(), default=None, help="defaults to RUN_DIR")
def report(run_dir, out_dir):
    """Emit forest.csv, summary.md and figures from a finished analysis."""
    try:
        paths = emit_report(run_dir, out_dir)
    except FileNotFoundError as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(1)
    click.echo("\n".join(sorted(paths.values())))


@main.command()
@click.option("--analysis", type=click.Choice(list(ANALYSES)), default=None)
@click.option("--in-dir", type=click.Path(exists=True, file_okay=False), default=None)
@click.option("--out-dir", type=click.Path(), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--windows", default=",".join(str(int(w)) for w in STANDARD_WINDOWS), show_default=True, help="comma-separated window hours")
@click.option("--calipers", default=None, help="comma-separated caliper sizes (optional second sweep axis)")
@click.option("--caliper-unit", type=click.Choice(["sd", "absolute"]), default=None)
@click.option("--ratio", type=int, default=None)
@click.option("--ddimer-cutoff", type=float, default=None)
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
def sweep(config_path, windows, calipers, **cli_values):
    """Window/caliper sensitivity sweep over one input cohort."""
    base = _merged_config(config_path, {**cli_values, "select_covariates": False})
    out = Path(base.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    window_values = [float(w) for w in str(windows).split(",") if w]
    caliper_values = [float(c) for c in str(calipers).split(",")] if calipers else [base.caliper]

    try:
        tables = read_raw_tables(base.in_dir)
    except Exception as e:  # noqa: BLE001
        click.echo(f"error: [load] {e}", err=True)
        sys.exit(2)

    rows = []
    for window in window_values:
        for caliper in caliper_values:
            cfg_kwargs = {**base.__dict__, "window_hours": window, "caliper": caliper}
            config = PipelineConfig(**cfg_kwargs)
            try:
                result = run_analysis(tables, config)
            except StageError as e:
                click.echo(f"error at window={window} caliper={caliper}: {e}", err=True)
                sys.exit(e.exit_code)
            for name, est in sorted(result.estimates.items()):
                rows.append(
                    {
                        "window_hours": window,
                        "caliper": caliper,
                        "estimator": name,
                        "point": est.point,
                        "lo": est.ci95[0],
                        "hi": est.ci95[1],
                        "n_matched_treated": result.matched.n_matched_treated,
                    }
                )
            click.echo(
                f"window={window:g}h caliper={caliper:g}: matched "
                f"{result.estimates['matched'].point:+.2f} "
                f"[{result.estimates['matched'].ci95[0]:+.2f}, {result.estimates['matched'].ci95[1]:+.2f}]"
            )
    frame = pd.DataFrame(rows)
    frame.to_csv(out / "sweep.csv", index=False)
    matched = frame[frame["estimator"] == "matched"].copy()
    matched["analysis"] = base.analysis
    matched["estimator"] = [f"w={int(w)}h" for w in matched["window_hours"]]
    render_forest_figure(matched[["analysis", "estimator", "point", "lo", "hi"]].reset_index(drop=True), out / "sweep.png")
    click.echo(f"sweep written to {out / 'sweep.csv'}")


if __name__ == "__main__":
    main()
