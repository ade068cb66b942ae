"""Raw patient tables -> analysis covariate matrix.

Pipeline order: summarize first-24h vitals, merge with the patient table,
drop high-missingness labs (keep-list exempt), log-transform and winsorize
labs, one-hot encode categoricals, then restrict to complete cases. All
functions are pure; dropped columns/rows are accumulated in a report that
serializes to ``preprocess_log.json``.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

VITAL_NAMES = ("heart_rate", "oxygen_saturation", "blood_pressure", "temperature", "respiratory_rate")
VITALS_WINDOW_HOURS = 24.0
DEFAULT_MISSING_THRESHOLD = 0.20
WINSOR_PERCENTILE = 0.99


@dataclass
class CovariateTable:
    """Patient-by-covariate rectangle: float data (NaN = missing) + column kinds.

    Rows are indexed by unique patient id; ``kinds`` maps each column to
    ``binary``, ``continuous`` or ``categorical-encoded``.
    """

    data: pd.DataFrame
    kinds: dict[str, str]

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.data.index.has_duplicates:
            raise ValueError("duplicate patient ids")
        if self.data.columns.has_duplicates:
            raise ValueError("duplicate column names")
        unknown = set(self.data.columns) - set(self.kinds)
        if unknown:
            raise ValueError(f"columns without a declared kind: {sorted(unknown)}")
        bad_kind = {k: v for k, v in self.kinds.items() if v not in ("binary", "continuous", "categorical-encoded")}
        if bad_kind:
            raise ValueError(f"unknown column kinds: {bad_kind}")
        for col, kind in self.kinds.items():
            if col not in self.data.columns:
                continue
            if kind in ("binary", "categorical-encoded"):
                vals = self.data[col].dropna().unique()
                if not set(vals) <= {0.0, 1.0}:
                    raise ValueError(f"column {col!r} declared {kind} but holds {sorted(vals)[:5]}")

    @property
    def patient_ids(self) -> list[str]:
        return list(self.data.index)

    @property
    def missing_mask(self) -> pd.DataFrame:
        return self.data.isna()

    def column_names(self) -> list[str]:
        return list(self.data.columns)

    def subset_columns(self, names) -> "CovariateTable":
        names = list(names)
        return CovariateTable(self.data[names].copy(), {c: self.kinds[c] for c in names})


@dataclass
class VitalsSeries:
    """One patient's readings for one vital, as (hours-since-admission, value)."""

    patient_id: str
    vital_name: str
    readings: list[tuple[float, float]]

    def __post_init__(self):
        if any(t < 0 for t, _ in self.readings):
            raise ValueError("vital reading before admission (negative timestamp)")
        self.readings = sorted(self.readings)


@dataclass
class PreprocessReport:
    """What got dropped and why; serialized as preprocess_log.json."""

    dropped_columns: list[dict] = field(default_factory=list)
    dropped_rows: list[dict] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    n_rows_in: int = 0
    n_rows_out: int = 0

    def to_json(self) -> str:
        payload = {
            "n_rows_in": self.n_rows_in,
            "n_rows_out": self.n_rows_out,
            "dropped_columns": self.dropped_columns,
            "dropped_rows": self.dropped_rows,
            "warnings": self.warnings,
        }
        return json.dumps(payload, indent=2, sort_keys=True)


def filter_high_missing_columns(
    table: CovariateTable,
    threshold: float = DEFAULT_MISSING_THRESHOLD,
    keep_list: tuple[str, ...] = (),
    report: PreprocessReport | None = None,
) -> CovariateTable:
    """Drop columns whose missing fraction exceeds ``threshold``.

    Columns named in ``keep_list`` are retained regardless (names that do
    not exist are ignored with a warning). A column at exactly the
    threshold is kept. Column order is otherwise preserved.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must be a fraction in [0, 1]")
    if len(table.data) == 0:
        raise ValueError("no rows")
    missing_names = [c for c in keep_list if c not in table.data.columns]
    for name in missing_names:
        msg = f"keep_list column {name!r} not present; ignored"
        logger.warning(msg)
        if report is not None:
            report.warnings.append(msg)
    keep = set(keep_list) - set(missing_names)

    frac = table.data.isna().mean(axis=0)
    retained = [c for c in table.data.columns if frac[c] <= threshold or c in keep]
    dropped = [c for c in table.data.columns if c not in retained]
    if report is not None:
        for c in dropped:
            report.dropped_columns.append(
                {"column": c, "reason": "missing-fraction", "missing_fraction": round(float(frac[c]), 6)}
            )
    return table.subset_columns(retained)


def winsorize_values(values: np.ndarray, upper_percentile: float = WINSOR_PERCENTILE) -> np.ndarray:
    """Cap values above the nearest-rank upper percentile of non-missing cells.

    Nearest-rank: the ceil(p*m)-th smallest of the m non-missing values.
    Missing cells pass through untouched; no lower cap is applied.
    """
    if not 0.0 < upper_percentile < 1.0:
        raise ValueError("upper_percentile must be in (0, 1)")
    values = np.asarray(values, dtype=float)
    present = ~np.isnan(values)
    m = int(present.sum())
    if m == 0:
        raise ValueError("all values missing; cannot winsorize")
    ranked = np.sort(values[present])
    cap = ranked[math.ceil(upper_percentile * m) - 1]
    out = values.copy()
    out[present & (values > cap)] = cap
    return out


def log_transform_values(values: np.ndarray) -> np.ndarray:
    """Replace each non-missing x with log(1+x); labs must be nonnegative."""
    values = np.asarray(values, dtype=float)
    present = ~np.isnan(values)
    neg = np.nonzero(present & (values < 0))[0]
    if neg.size:
        raise ValueError(f"negative lab value at row index {int(neg[0])}: {values[neg[0]]}")
    out = values.copy()
    out[present] = np.log1p(values[present])
    return out


def summarize_vitals(series: VitalsSeries, window_hours: float = VITALS_WINDOW_HOURS):
    """(mean, min, max) over readings at or before ``window_hours``.

    No readings in the window -> (nan, nan, nan).
    """
    if window_hours <= 0:
        raise ValueError("window_hours must be positive")
    vals = [v for t, v in series.readings if t <= window_hours]
    if not vals:
        return (float("nan"),) * 3
    arr = np.asarray(vals, dtype=float)
    return float(arr.mean()), float(arr.min()), float(arr.max())


def summarize_vitals_table(vitals: pd.DataFrame, window_hours: float = VITALS_WINDOW_HOURS) -> pd.DataFrame:
    """Wide per-patient vitals summary from the long-format vitals table.

    Expects columns patient_id, vital_name, hours_since_admission, value.
    Output columns are named ``v24_<vital>_<stat>``; patients with no
    readings for a vital get NaN in that vital's three columns.
    """
    if window_hours <= 0:
        raise ValueError("window_hours must be positive")
    # canonical row order: float accumulation order must not depend on the
    # order rows appear in the input file
    vitals = vitals.sort_values(
        ["patient_id", "vital_name", "hours_since_admission", "value"], kind="stable"
    )
    sub = vitals[vitals["hours_since_admission"] <= window_hours]
    grouped = sub.groupby(["patient_id", "vital_name"])["value"].agg(["mean", "min", "max"])
    wide = grouped.unstack("vital_name")
    wide.columns = [f"v24_{vital}_{stat}" for stat, vital in wide.columns]
    ordered = [
        f"v24_{vital}_{stat}" for vital in VITAL_NAMES for stat in ("mean", "min", "max")
        if f"v24_{vital}_{stat}" in wide.columns
    ]
    return wide[ordered].sort_index()


def complete_cases(
    table: CovariateTable,
    required: list[str] | None = None,
    report: PreprocessReport | None = None,
) -> CovariateTable:
    """Keep only rows with no missing cell among ``required`` columns.

    ``required=None`` means all columns. Retained/dropped counts land in
    the report.
    """
    req = list(table.data.columns) if required is None else list(required)
    unknown = [c for c in req if c not in table.data.columns]
    if unknown:
        raise ValueError(f"required columns not in table: {unknown}")
    ok = ~table.data[req].isna().any(axis=1)
    dropped_ids = list(table.data.index[~ok])
    if report is not None:
        report.n_rows_in = len(table.data)
        report.n_rows_out = int(ok.sum())
        for pid in dropped_ids:
            missing_cols = [c for c in req if pd.isna(table.data.at[pid, c])]
            report.dropped_rows.append({"patient_id": str(pid), "reason": "incomplete", "missing": missing_cols})
    logger.info("complete cases: retained %d of %d rows", int(ok.sum()), len(table.data))
    return CovariateTable(table.data[ok].copy(), dict(table.kinds))


def one_hot_encode(values: pd.Series, prefix: str) -> tuple[pd.DataFrame, str]:
    """One-hot a categorical column, dropping the most frequent level as reference.

    Ties on frequency break by level name so the encoding is deterministic.
    Returns (dummy frame, reference level).
    """
    counts = values.value_counts()
    top = counts.max()
    reference = sorted(level for level, c in counts.items() if c == top)[0]
    levels = sorted(lv for lv in counts.index if lv != reference)
    out = pd.DataFrame(index=values.index)
    for lv in levels:
        out[f"{prefix}_{lv}"] = (values == lv).astype(float)
    return out, reference


def build_covariate_table(
    patients: pd.DataFrame,
    vitals: pd.DataFrame,
    lab_columns: list[str],
    binary_columns: list[str],
    continuous_columns: list[str],
    categorical_columns: list[str],
    missing_threshold: float = DEFAULT_MISSING_THRESHOLD,
    keep_list: tuple[str, ...] = (),
    complete_case_exempt: tuple[str, ...] = (),
    report: PreprocessReport | None = None,
) -> CovariateTable:
    """Full preprocessing chain from raw patients + vitals tables.

    ``complete_case_exempt`` names columns whose missingness should NOT
    drop the row here (e.g. a lab whose missing patients are excluded at
    cohort stage with their own reason code).

    Rows come out sorted by patient id, so any input row order produces
    the same matrix.
    """
    report = report if report is not None else PreprocessReport()
    pts = patients.set_index("patient_id").sort_index() if "patient_id" in patients.columns else patients.sort_index()
    if pts.index.has_duplicates:
        raise ValueError("duplicate patient ids in patients table")

    frames = []
    kinds: dict[str, str] = {}

    for col in binary_columns:
        frames.append(pts[col].astype(float).rename(col))
        kinds[col] = "binary"
    for col in continuous_columns:
        frames.append(pts[col].astype(float).rename(col))
        kinds[col] = "continuous"
    for col in categorical_columns:
        dummies, reference = one_hot_encode(pts[col].astype(str), prefix=col)
        report.warnings.append(f"encoded {col!r} with reference level {reference!r}")
        for c in dummies.columns:
            kinds[c] = "categorical-encoded"
        frames.append(dummies)
    for col in lab_columns:
        frames.append(pts[col].astype(float).rename(col))
        kinds[col] = "continuous"

    summaries = summarize_vitals_table(vitals)
    summaries = summaries.reindex(pts.index)
    for c in summaries.columns:
        kinds[c] = "continuous"
    frames.append(summaries)

    data = pd.concat(frames, axis=1)
    table = CovariateTable(data, kinds)

    table = filter_high_missing_columns(table, missing_threshold, keep_list, report)

    retained_labs = [c for c in lab_columns if c in table.data.columns]
    data = table.data.copy()
    for col in retained_labs:
        capped = winsorize_values(data[col].to_numpy())
        data[col] = log_transform_values(capped)
    table = CovariateTable(data, dict(table.kinds))

    required = [c for c in table.data.columns if c not in set(complete_case_exempt)]
    return complete_cases(table, required, report)
