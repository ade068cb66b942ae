"""End-to-end analysis driver: raw tables in, effect estimates and reports out.

`run_analysis` is the in-memory core (used directly by the validation
suite); `run_pipeline` wraps it with CSV ingestion and the full set of
output artifacts. Row order of every input table is irrelevant: tables are
canonicalized by patient id at the boundary, so a permuted input file
produces byte-identical outputs.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .cohort import (
    DDIMER_CUTOFF_NG_ML,
    DEFAULT_WINDOW_HOURS,
    CohortResult,
    MedAdminEvent,
    OrganSupportRecord,
    build_cohort,
)
from .estimation import (
    EffectEstimate,
    matched_att,
    regression_adjusted_att,
    select_important_covariates,
    unadjusted_diff,
)
from .glm import DesignMatrix, fit_logistic_irls, predict_proba
from .matching import MatchedSet, match_nearest_caliper, overlap_histogram, smd_balance
from .preprocess import (
    DEFAULT_MISSING_THRESHOLD,
    CovariateTable,
    PreprocessReport,
    build_covariate_table,
)

logger = logging.getLogger(__name__)

ANALYSES = ("ac", "steroid", "fxa")

STAGE_EXIT_CODES = {
    "load": 2,
    "preprocess": 3,
    "cohort": 4,
    "propensity": 5,
    "matching": 6,
    "estimation": 7,
    "report": 8,
}


class StageError(RuntimeError):
    """Pipeline failure tagged with the stage that raised it."""

    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.exit_code = STAGE_EXIT_CODES.get(stage, 1)
        super().__init__(f"[{stage}] {cause}")


@dataclass
class PipelineConfig:
    analysis: str = "steroid"
    in_dir: str = "data"
    out_dir: str = "results"
    window_hours: float = DEFAULT_WINDOW_HOURS
    caliper: float = 0.05
    caliper_unit: str = "sd"
    ratio: int = 3
    ddimer_cutoff: float = DDIMER_CUTOFF_NG_ML
    missing_threshold: float = DEFAULT_MISSING_THRESHOLD
    keep_list: tuple[str, ...] = ()
    seed: int = 0
    select_covariates: bool = True

    def __post_init__(self):
        if self.analysis not in ANALYSES:
            raise ValueError(f"analysis must be one of {ANALYSES}")
        if self.caliper_unit not in ("sd", "absolute"):
            raise ValueError("caliper_unit must be 'sd' or 'absolute'")
        if self.ratio < 1:
            raise ValueError("ratio must be >= 1")
        if not 0 < self.window_hours <= 24 * 14:
            raise ValueError("window_hours out of range")

    def effective_keep_list(self) -> tuple[str, ...]:
        # the D-dimer lab stays a covariate in the AC analysis despite its
        # missingness; its missing patients are excluded at cohort stage
        if self.analysis == "ac":
            return tuple(sorted(set(self.keep_list) | {"l36_d_dimer"}))
        return tuple(self.keep_list)


@dataclass
class RawTables:
    patients: pd.DataFrame
    vitals: pd.DataFrame
    med_events: pd.DataFrame
    organ_support: pd.DataFrame
    outcomes: pd.DataFrame


def read_raw_tables(in_dir) -> RawTables:
    p = Path(in_dir)
    def _read(name, **kw):
        path = p / name
        if not path.exists():
            raise FileNotFoundError(f"missing input table: {path}")
        return pd.read_csv(path, **kw)

    patients = _read("patients.csv", dtype={"patient_id": str})
    vitals = _read("vitals.csv", dtype={"patient_id": str})
    med_events = _read("med_events.csv", dtype={"patient_id": str})
    organ_support = _read("organ_support.csv", dtype={"patient_id": str})
    outcomes = _read("outcomes.csv", dtype={"patient_id": str})
    if outcomes["died"].dtype != bool:
        outcomes["died"] = outcomes["died"].astype(str).str.lower().map({"true": True, "false": False})
        if outcomes["died"].isna().any():
            raise ValueError("outcomes.csv died column must be boolean")
    return RawTables(patients, vitals, med_events, organ_support, outcomes)


def _infer_column_roles(patients: pd.DataFrame):
    """Split patient columns by the schema's naming conventions."""
    cols = list(patients.columns)
    labs = [c for c in cols if c.startswith("l36_")]
    binary = [c for c in cols if c.startswith(("cm_", "meds_")) and c != "cm_charlson"]
    continuous = ["age", "cm_charlson"]
    categorical = [c for c in ("race", "smoking_status") if c in cols]
    return labs, binary, continuous, categorical


def preprocess_tables(tables: RawTables, config: PipelineConfig) -> tuple[CovariateTable, PreprocessReport]:
    report = PreprocessReport()
    patients = tables.patients.copy()
    if "sex" in patients.columns:
        patients["male"] = (patients["sex"].astype(str) == "male").astype(int)
        patients = patients.drop(columns="sex")
    labs, binary, continuous, categorical = _infer_column_roles(patients)
    binary = ["male"] + binary if "male" in patients.columns else binary
    keep = config.effective_keep_list()
    exempt = ("l36_d_dimer",) if config.analysis == "ac" else ()
    table = build_covariate_table(
        patients,
        tables.vitals,
        lab_columns=labs,
        binary_columns=binary,
        continuous_columns=continuous,
        categorical_columns=categorical,
        missing_threshold=config.missing_threshold,
        keep_list=keep,
        complete_case_exempt=exempt,
        report=report,
    )
    return table, report


def _events_by_patient(med_events: pd.DataFrame) -> dict[str, list[MedAdminEvent]]:
    out: dict[str, list[MedAdminEvent]] = {}
    frame = med_events.sort_values(
        ["patient_id", "hours_since_admission", "drug", "dose", "route"], kind="stable"
    )
    for row in frame.itertuples(index=False):
        ev = MedAdminEvent(
            patient_id=str(row.patient_id),
            drug=str(row.drug),
            dose=float(row.dose),
            route=str(row.route),
            timestamp=float(row.hours_since_admission),
        )
        out.setdefault(ev.patient_id, []).append(ev)
    return out


def _support_records(organ_support: pd.DataFrame, outcomes: pd.DataFrame) -> dict[str, OrganSupportRecord]:
    days: dict[str, set[int]] = {}
    for row in organ_support.itertuples(index=False):
        days.setdefault(str(row.patient_id), set()).add(int(row.day_index))
    records = {}
    for row in outcomes.itertuples(index=False):
        pid = str(row.patient_id)
        records[pid] = OrganSupportRecord(
            patient_id=pid,
            support_days=frozenset(days.get(pid, set())),
            died=bool(row.died),
            observed_days=int(row.observed_days),
        )
    return records


def build_cohort_from_tables(tables: RawTables, config: PipelineConfig) -> CohortResult:
    events = _events_by_patient(tables.med_events)
    records = _support_records(tables.organ_support, tables.outcomes)
    ddimer = None
    if config.analysis == "ac":
        pts = tables.patients.set_index("patient_id")
        ddimer = {
            str(pid): (None if pd.isna(v) else float(v))
            for pid, v in pts["l36_d_dimer"].items()
        }
    return build_cohort(
        config.analysis,
        events,
        records,
        ddimer_values=ddimer,
        window_hours=config.window_hours,
        ddimer_cutoff=config.ddimer_cutoff,
    )


@dataclass
class AnalysisResult:
    analysis: str
    estimates: dict[str, EffectEstimate]
    matched: MatchedSet
    balance: pd.DataFrame
    histogram: pd.DataFrame
    propensity: pd.Series  # indexed by patient id, treated+control rows
    arms: dict[str, str]
    cohort: CohortResult
    covariates_used: list[str]
    covariate_matrix: pd.DataFrame | None = None  # full post-preprocess table
    important_covariates: list[str] = field(default_factory=list)
    preprocess_report: PreprocessReport | None = None
    n_population: int = 0

    def arm_counts(self) -> dict[str, int]:
        counts = {"treated": 0, "control": 0}
        for a in self.arms.values():
            counts[a] += 1
        return counts


def run_analysis(tables: RawTables, config: PipelineConfig, artifact_dir=None) -> AnalysisResult:
    """Preprocess, assign arms, fit the propensity model, match, estimate.

    With ``artifact_dir`` set, stage outputs (covariates.csv,
    preprocess_log.json, cohort_<analysis>.csv) are written as soon as each
    stage completes, so a later-stage failure still leaves partial logs.
    """
    sink = Path(artifact_dir) if artifact_dir is not None else None
    if sink is not None:
        sink.mkdir(parents=True, exist_ok=True)

    try:
        table, report = preprocess_tables(tables, config)
    except Exception as e:  # noqa: BLE001 - stage tagging
        raise StageError("preprocess", e) from e
    if sink is not None:
        table.data.to_csv(sink / "covariates.csv", index_label="patient_id")
        (sink / "preprocess_log.json").write_text(report.to_json() + "\n")

    try:
        cohort_res = build_cohort_from_tables(tables, config)
    except Exception as e:
        raise StageError("cohort", e) from e
    if sink is not None:
        _write_cohort_csv(cohort_res, config, sink)

    in_table = set(table.patient_ids)
    arms = {
        pid: a.arm
        for pid, a in cohort_res.assignments.items()
        if a.arm in ("treated", "control") and pid in in_table
    }
    pop_ids = sorted(arms)
    if not pop_ids:
        raise StageError("cohort", ValueError("no analyzable patients after exclusions"))
    data = table.data.loc[pop_ids]
    if data.isna().any().any():
        bad = sorted(data.columns[data.isna().any()])
        raise StageError("preprocess", ValueError(f"missing cells survived preprocessing: {bad}"))

    # constant columns carry no information and break the fits
    nunique = data.nunique(axis=0)
    const_cols = sorted(nunique[nunique <= 1].index)
    if const_cols:
        logger.warning("dropping constant covariates for %s analysis: %s", config.analysis, const_cols)
        if report is not None:
            for c in const_cols:
                report.dropped_columns.append({"column": c, "reason": "constant-in-analysis-population"})
        data = data.drop(columns=const_cols)

    X = DesignMatrix(data.to_numpy(dtype=float), list(data.columns))
    treated_vec = np.asarray([1.0 if arms[p] == "treated" else 0.0 for p in pop_ids])
    y_vec = np.asarray([float(cohort_res.outcomes[p]) for p in pop_ids])

    try:
        prop_model = fit_logistic_irls(X, treated_vec)
        ps = pd.Series(predict_proba(prop_model, X), index=pop_ids)
    except Exception as e:
        raise StageError("propensity", e) from e

    try:
        ps_treated = ps[[p for p in pop_ids if arms[p] == "treated"]]
        ps_control = ps[[p for p in pop_ids if arms[p] == "control"]]
        matched = match_nearest_caliper(
            ps_treated,
            ps_control,
            ratio=config.ratio,
            caliper=config.caliper,
            caliper_unit=config.caliper_unit,
            replace=True,
            seed=config.seed,
        )
        histogram = overlap_histogram(ps_treated, ps_control)
        balance = smd_balance(
            data,
            arms,
            control_weights=matched.control_weights,
            matched_treated_ids=matched.treated_ids,
        )
    except Exception as e:
        raise StageError("matching", e) from e

    try:
        outcomes_map = {p: float(cohort_res.outcomes[p]) for p in pop_ids}
        estimates = {
            "unadjusted": unadjusted_diff(outcomes_map, arms),
            "regression": regression_adjusted_att(X, treated_vec, y_vec),
            "matched": matched_att(matched, outcomes_map),
        }
    except Exception as e:
        raise StageError("estimation", e) from e

    important: list[str] = []
    if config.select_covariates:
        try:
            important = select_important_covariates(X, y_vec, treated_vec, seed=config.seed)
        except Exception as e:
            raise StageError("estimation", e) from e

    return AnalysisResult(
        analysis=config.analysis,
        estimates=estimates,
        matched=matched,
        balance=balance,
        histogram=histogram,
        propensity=ps,
        arms=arms,
        cohort=cohort_res,
        covariates_used=list(data.columns),
        covariate_matrix=table.data,
        important_covariates=important,
        preprocess_report=report,
        n_population=len(pop_ids),
    )


def effects_payload(result: AnalysisResult, config: PipelineConfig) -> dict:
    return {
        "analysis": result.analysis,
        "estimates": {name: est.to_dict() for name, est in sorted(result.estimates.items())},
        "meta": {
            "seed": config.seed,
            "window_hours": config.window_hours,
            "caliper": config.caliper,
            "caliper_unit": config.caliper_unit,
            "ratio": config.ratio,
            "ddimer_cutoff": config.ddimer_cutoff,
            "missing_threshold": config.missing_threshold,
            "match_replace": True,
            "n_population": result.n_population,
            "n_treated": result.arm_counts()["treated"],
            "n_control": result.arm_counts()["control"],
            "n_matched_treated": result.matched.n_matched_treated,
            "matched_fraction": result.matched.matched_fraction,
            "exclusions": result.cohort.exclusion_counts(),
            "version": __version__,
        },
    }


def write_outputs(result: AnalysisResult, config: PipelineConfig, out_dir) -> dict[str, str]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}

    payload = effects_payload(result, config)
    (out / "effects.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    paths["effects.json"] = str(out / "effects.json")

    balance = result.balance[["covariate", "smd_pre", "smd_post"]]
    balance.to_csv(out / "balance.csv", index=False)
    paths["balance.csv"] = str(out / "balance.csv")

    result.histogram.to_csv(out / "propensity_hist.csv", index=False)
    paths["propensity_hist.csv"] = str(out / "propensity_hist.csv")

    pairs = [
        {"treated_id": m.treated_id, "control_id": cid, "distance": d, "weight": 1.0 / len(m.control_ids)}
        for m in result.matched.matches
        for cid, d in zip(m.control_ids, m.distances)
    ]
    pd.DataFrame(pairs, columns=["treated_id", "control_id", "distance", "weight"]).to_csv(
        out / "matched_pairs.csv", index=False
    )
    paths["matched_pairs.csv"] = str(out / "matched_pairs.csv")

    cohort_name = _write_cohort_csv(result.cohort, config, out)
    paths[cohort_name] = str(out / cohort_name)

    if result.covariate_matrix is not None:
        result.covariate_matrix.to_csv(out / "covariates.csv", index_label="patient_id")
        paths["covariates.csv"] = str(out / "covariates.csv")

    if result.preprocess_report is not None:
        (out / "preprocess_log.json").write_text(result.preprocess_report.to_json() + "\n")
        paths["preprocess_log.json"] = str(out / "preprocess_log.json")

    if result.important_covariates:
        (out / "important_covariates.json").write_text(
            json.dumps({"analysis": result.analysis, "covariates": result.important_covariates}, indent=2) + "\n"
        )
        paths["important_covariates.json"] = str(out / "important_covariates.json")

    meta = {"config": asdict(config), "version": __version__, "outputs": sorted(paths)}
    (out / "run_meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    paths["run_meta.json"] = str(out / "run_meta.json")
    return paths


def _write_cohort_csv(cohort_res: CohortResult, config: PipelineConfig, out: Path) -> str:
    rows = [
        {
            "patient_id": pid,
            "arm": cohort_res.assignments[pid].arm,
            "reason": cohort_res.assignments[pid].reason,
            "osfd21": cohort_res.outcomes[pid],
        }
        for pid in sorted(cohort_res.assignments)
    ]
    name = f"cohort_{config.analysis}.csv"
    pd.DataFrame(rows).to_csv(out / name, index=False)
    return name


def run_pipeline(config: PipelineConfig) -> tuple[AnalysisResult, dict[str, str]]:
    """CSV-to-CSV pipeline: load, analyze, write every artifact.

    Stage outputs are written incrementally, so an abort partway leaves
    the stages that did finish on disk.
    """
    try:
        tables = read_raw_tables(config.in_dir)
    except Exception as e:
        raise StageError("load", e) from e
    result = run_analysis(tables, config, artifact_dir=config.out_dir)
    try:
        paths = write_outputs(result, config, config.out_dir)
    except StageError:
        raise
    except Exception as e:
        raise StageError("report", e) from e
    logger.info(
        "analysis=%s: unadjusted %.3f, regression %.3f, matched %.3f",
        result.analysis,
        result.estimates["unadjusted"].point,
        result.estimates["regression"].point,
        result.estimates["matched"].point,
    )
    return result, paths
