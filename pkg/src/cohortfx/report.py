"""Report emission: forest-plot data, a markdown summary, and rendered figures.

The delimited files are the canonical, diff-able record; the PNG figures
(forest plot, balance love plot, propensity overlap) are rendered
alongside them for quick reading.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import pandas as pd

logger = logging.getLogger(__name__)

ESTIMATOR_ORDER = ("unadjusted", "regression", "matched")


def load_run_dir(run_dir) -> dict:
    """Read the artifacts a report needs from a finished analysis directory."""
    run = Path(run_dir)
    effects_path = run / "effects.json"
    if not effects_path.exists():
        raise FileNotFoundError(f"no effects.json under {run}; run the analysis first")
    artifacts = {"effects": json.loads(effects_path.read_text())}
    balance_path = run / "balance.csv"
    artifacts["balance"] = pd.read_csv(balance_path) if balance_path.exists() else None
    hist_path = run / "propensity_hist.csv"
    artifacts["histogram"] = pd.read_csv(hist_path) if hist_path.exists() else None
    important_path = run / "important_covariates.json"
    artifacts["important"] = (
        json.loads(important_path.read_text())["covariates"] if important_path.exists() else None
    )
    return artifacts


def forest_frame(effects: dict) -> pd.DataFrame:
    rows = []
    analysis = effects["analysis"]
    for estimator in ESTIMATOR_ORDER:
        if estimator not in effects["estimates"]:
            continue
        est = effects["estimates"][estimator]
        rows.append(
            {
                "analysis": analysis,
                "estimator": estimator,
                "point": est["point"],
                "lo": est["ci95"]["lo"],
                "hi": est["ci95"]["hi"],
            }
        )
    return pd.DataFrame(rows, columns=["analysis", "estimator", "point", "lo", "hi"])


def summary_markdown(effects: dict) -> str:
    meta = effects["meta"]
    lines = [
        f"# Analysis summary: {effects['analysis']}",
        "",
        f"Population: {meta['n_population']} patients "
        f"({meta['n_treated']} treated, {meta['n_control']} control).",
    ]
    exclusions = meta.get("exclusions") or {}
    if exclusions:
        total = sum(exclusions.values())
        detail = ", ".join(f"{k}: {v}" for k, v in sorted(exclusions.items()))
        lines.append(f"Excluded {total} patients ({detail}).")
    n_t = meta["n_treated"]
    n_m = meta["n_matched_treated"]
    dropped = n_t - n_m
    pct = 100.0 * dropped / n_t if n_t else 0.0
    lines.append(
        f"Matching kept {n_m} of {n_t} treated patients; dropped {dropped} "
        f"(approximately {pct:.0f}%) for lack of in-caliper controls "
        f"(caliper {meta['caliper']} {meta['caliper_unit']}, ratio {meta['ratio']}:1, with replacement)."
    )
    lines += [
        "",
        "| estimator | point (days) | 95% CI | p |",
        "|---|---|---|---|",
    ]
    for estimator in ESTIMATOR_ORDER:
        if estimator not in effects["estimates"]:
            continue
        e = effects["estimates"][estimator]
        lines.append(
            f"| {estimator} | {e['point']:.2f} | [{e['ci95']['lo']:.2f}, {e['ci95']['hi']:.2f}] | "
            f"{e['p_value']:.3f} |"
        )
    lines += [
        "",
        f"Parameters: window {meta['window_hours']}h, seed {meta['seed']}, "
        f"D-dimer cutoff {meta['ddimer_cutoff']}, missingness threshold {meta['missing_threshold']}.",
        "",
    ]
    return "\n".join(lines)


def render_forest_figure(forest: pd.DataFrame, path):
    fig, ax = plt.subplots(figsize=(6, 2.2 + 0.5 * len(forest)))
    ys = range(len(forest))
    ax.errorbar(
        forest["point"],
        ys,
        xerr=[forest["point"] - forest["lo"], forest["hi"] - forest["point"]],
        fmt="o",
        color="black",
        capsize=3,
    )
    ax.axvline(0.0, color="gray", lw=0.8, ls="--")
    ax.set_yticks(list(ys))
    ax.set_yticklabels(forest["estimator"])
    ax.invert_yaxis()
    ax.set_xlabel("effect on organ-support-free days (95% CI)")
    ax.set_title(f"{forest['analysis'].iloc[0]} analysis")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_balance_figure(balance: pd.DataFrame, path, important: list[str] | None = None):
    """Love plot of pre/post standardized mean differences.

    With an important-covariate screen available, only those rows are
    drawn (the full table stays in balance.csv).
    """
    frame = balance
    if important:
        sel = balance[balance["covariate"].isin(important)]
        if len(sel):
            frame = sel
    frame = frame.reindex(frame["smd_pre"].abs().sort_values().index)
    ys = range(len(frame))
    fig, ax = plt.subplots(figsize=(6, 1.5 + 0.28 * len(frame)))
    ax.scatter(frame["smd_pre"].abs(), ys, label="pre-match", color="firebrick", marker="o")
    ax.scatter(frame["smd_post"].abs(), ys, label="post-match", color="steelblue", marker="x")
    ax.axvline(0.1, color="gray", lw=0.8, ls="--")
    ax.set_yticks(list(ys))
    ax.set_yticklabels(frame["covariate"], fontsize=7)
    ax.set_xlabel("|standardized mean difference|")
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_overlap_figure(histogram: pd.DataFrame, path):
    centers = (histogram["bin_lo"] + histogram["bin_hi"]) / 2.0
    width = (histogram["bin_hi"] - histogram["bin_lo"]).iloc[0]
    fig, ax = plt.subplots(figsize=(6, 3.2))
    ax.bar(centers, histogram["n_control"], width=width, alpha=0.55, label="control", color="steelblue")
    ax.bar(centers, histogram["n_treated"], width=width, alpha=0.55, label="treated", color="firebrick")
    ax.set_xlabel("propensity score")
    ax.set_ylabel("patients")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def emit_report(run_dir, out_dir=None) -> dict[str, str]:
    """forest.csv + summary.md + figures from a finished analysis directory."""
    out = Path(out_dir) if out_dir is not None else Path(run_dir)
    out.mkdir(parents=True, exist_ok=True)
    artifacts = load_run_dir(run_dir)
    effects = artifacts["effects"]
    paths = {}

    forest = forest_frame(effects)
    forest.to_csv(out / "forest.csv", index=False)
    paths["forest.csv"] = str(out / "forest.csv")

    (out / "summary.md").write_text(summary_markdown(effects))
    paths["summary.md"] = str(out / "summary.md")

    render_forest_figure(forest, out / "forest.png")
    paths["forest.png"] = str(out / "forest.png")
    if artifacts["balance"] is not None:
        render_balance_figure(artifacts["balance"], out / "balance.png", artifacts["important"])
        paths["balance.png"] = str(out / "balance.png")
    if artifacts["histogram"] is not None:
        render_overlap_figure(artifacts["histogram"], out / "overlap.png")
        paths["overlap.png"] = str(out / "overlap.png")
    logger.info("report written to %s", out)
    return paths
