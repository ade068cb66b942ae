"""Outcome (21 organ-support-free days) and treatment-arm construction.

Three analyses share this module: early aggressive vs prophylactic
anticoagulation (72h window, dose-level rules, D-dimer exclusion), early
steroids (72h window), and the deliberately naive ever-received factor-XA
definition used as a cautionary analysis.
"""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, field

logger = logging.getLogger(__name__)

# Dose-level anticoagulation. Heparin is route-dependent; enoxaparin is
# dose-dependent; the oral agents count as therapeutic at any dose.
AC_DRUGS = frozenset({"heparin", "enoxaparin", "rivaroxaban", "warfarin", "dabigatran"})
THERAPEUTIC_ANY_DOSE = frozenset({"rivaroxaban", "warfarin", "dabigatran"})
FXA_DRUGS = frozenset({"apixaban", "rivaroxaban", "edoxaban"})
STEROID_DRUGS = frozenset({"dexamethasone", "hydrocortisone", "prednisone"})
KNOWN_DRUGS = AC_DRUGS | FXA_DRUGS | STEROID_DRUGS

ROUTES = frozenset({"intravenous", "subcutaneous", "oral"})

ENOXAPARIN_THERAPEUTIC_MG = 60.0
SUBCUT_HEPARIN_PROPHYLACTIC_UNITS_24H = 15000.0
DDIMER_CUTOFF_NG_ML = 3000.0
DEFAULT_WINDOW_HOURS = 72.0
STANDARD_WINDOWS = (24.0, 48.0, 72.0, 96.0)

THERAPEUTIC = "therapeutic"
PROPHYLACTIC = "prophylactic"
OTHER = "other"

TREATED = "treated"
CONTROL = "control"
EXCLUDED = "excluded"

REASON_MIXED = "mixed-dose-window"
REASON_NO_AC = "no-ac-in-window"
REASON_DDIMER_HIGH = "ddimer-high"
REASON_DDIMER_MISSING = "ddimer-missing"


@dataclass(frozen=True)
class MedAdminEvent:
    """One drug administration."""

    patient_id: str
    drug: str
    dose: float  # mg or units, per the drug's convention
    route: str  # intravenous | subcutaneous | oral
    timestamp: float  # hours since admission

    def __post_init__(self):
        if self.drug not in KNOWN_DRUGS:
            raise ValueError(f"unknown drug {self.drug!r}")
        if self.route not in ROUTES:
            raise ValueError(f"unknown route {self.route!r}")
        if self.timestamp < 0:
            raise ValueError("event before admission")
        if self.dose < 0:
            raise ValueError("negative dose")


@dataclass(frozen=True)
class OrganSupportRecord:
    """Per-patient organ-support calendar days and vital status.

    ``support_days`` holds 0-based day indices on which any organ support
    (pressors, renal replacement, high-flow oxygen, invasive ventilation)
    occurred. ``observed_days`` must be >= 21: the cohort is restricted to
    admissions old enough that the 21-day outcome is fully observed.
    """

    patient_id: str
    support_days: frozenset[int]
    died: bool
    observed_days: int = 21

    def __post_init__(self):
        if any(d < 0 for d in self.support_days):
            raise ValueError("negative support day index")
        if self.observed_days < 21:
            raise ValueError("outcome requires at least 21 observed days")


@dataclass(frozen=True)
class ArmAssignment:
    patient_id: str
    arm: str  # treated | control | excluded
    reason: str = ""


def osfd21(record: OrganSupportRecord) -> int:
    """21 organ-support-free days: -1 on death, else 21 minus support days.

    Only day indices 0..20 count against the measure; several support
    types on one calendar day count once (the record already stores days).
    """
    if record.died:
        return -1
    return 21 - sum(1 for d in record.support_days if d < 21)


def classify_ac_dose(event: MedAdminEvent, subcut_heparin_units_24h: float | None = None) -> str:
    """Classify one anticoagulation dose as therapeutic, prophylactic or other.

    Therapeutic: intravenous heparin at any dose; rivaroxaban, warfarin or
    dabigatran at any dose; enoxaparin at >= 60 mg. Prophylactic:
    subcutaneous heparin totaling <= 15,000 units per 24h, or enoxaparin
    under 60 mg. For subcutaneous heparin the relevant quantity is the
    day's total; pass it via ``subcut_heparin_units_24h`` (defaults to the
    single event's dose).

    Non-AC drugs classify as "other"; heparin by an unexpected route is an
    error.
    """
    if event.drug not in AC_DRUGS:
        return OTHER
    if event.drug in THERAPEUTIC_ANY_DOSE:
        return THERAPEUTIC
    if event.drug == "enoxaparin":
        return THERAPEUTIC if event.dose >= ENOXAPARIN_THERAPEUTIC_MG else PROPHYLACTIC
    # heparin
    if event.route == "intravenous":
        return THERAPEUTIC
    if event.route == "subcutaneous":
        total = event.dose if subcut_heparin_units_24h is None else subcut_heparin_units_24h
        if total <= SUBCUT_HEPARIN_PROPHYLACTIC_UNITS_24H:
            return PROPHYLACTIC
        # above the prophylactic ceiling: dose intent is treatment-level
        logger.debug(
            "subcutaneous heparin above %.0f units/24h for %s; classified therapeutic",
            SUBCUT_HEPARIN_PROPHYLACTIC_UNITS_24H,
            event.patient_id,
        )
        return THERAPEUTIC
    raise ValueError(f"heparin via unexpected route {event.route!r} for {event.patient_id}")


def _subcut_heparin_day_totals(events: list[MedAdminEvent]) -> dict[int, float]:
    """Units of subcutaneous heparin per rolling 24h day-bucket from admission."""
    totals: dict[int, float] = defaultdict(float)
    for ev in events:
        if ev.drug == "heparin" and ev.route == "subcutaneous":
            totals[int(ev.timestamp // 24)] += ev.dose
    return dict(totals)


def assign_ac_arm(events: list[MedAdminEvent], window_hours: float = DEFAULT_WINDOW_HOURS) -> ArmAssignment:
    """Early-anticoagulation arm for one patient from their med events.

    Treated: every AC dose in the window is therapeutic (and there is at
    least one). Control: every in-window AC dose is prophylactic. Both
    levels present -> excluded (mixed); no AC dose in the window ->
    excluded (the comparison is therapeutic-vs-prophylactic, not vs none).
    """
    if window_hours not in STANDARD_WINDOWS:
        logger.warning("nonstandard AC window %.0fh (sensitivity set is %s)", window_hours, STANDARD_WINDOWS)
    if not events:
        return ArmAssignment("", EXCLUDED, REASON_NO_AC)
    pid = events[0].patient_id
    if any(ev.patient_id != pid for ev in events):
        raise ValueError("assign_ac_arm expects a single patient's events")

    in_window = [ev for ev in events if ev.timestamp <= window_hours]
    day_totals = _subcut_heparin_day_totals(in_window)
    levels = set()
    for ev in in_window:
        if ev.drug not in AC_DRUGS:
            continue
        if ev.drug == "heparin" and ev.route == "subcutaneous":
            level = classify_ac_dose(ev, subcut_heparin_units_24h=day_totals[int(ev.timestamp // 24)])
        else:
            level = classify_ac_dose(ev)
        levels.add(level)

    if not levels:
        return ArmAssignment(pid, EXCLUDED, REASON_NO_AC)
    if levels == {THERAPEUTIC}:
        return ArmAssignment(pid, TREATED)
    if levels == {PROPHYLACTIC}:
        return ArmAssignment(pid, CONTROL)
    return ArmAssignment(pid, EXCLUDED, REASON_MIXED)


def apply_ddimer_exclusion(
    assignments: list[ArmAssignment],
    ddimer_values: dict[str, float | None],
    cutoff: float = DDIMER_CUTOFF_NG_ML,
) -> list[ArmAssignment]:
    """Exclude high or missing baseline D-dimer from the AC analysis.

    Patients at or above ``cutoff`` ng/mL near-uniformly receive the
    aggressive strategy, leaving no comparable controls; missing D-dimer
    drops the patient from this complete-case analysis. Already-excluded
    patients keep their original reason.
    """
    if cutoff <= 0:
        raise ValueError("cutoff must be positive")
    out = []
    for a in assignments:
        if a.arm == EXCLUDED:
            out.append(a)
            continue
        value = ddimer_values.get(a.patient_id)
        if value is None or (isinstance(value, float) and value != value):  # NaN-safe
            out.append(ArmAssignment(a.patient_id, EXCLUDED, REASON_DDIMER_MISSING))
        elif value >= cutoff:
            out.append(ArmAssignment(a.patient_id, EXCLUDED, REASON_DDIMER_HIGH))
        else:
            out.append(a)
    return out


def assign_steroid_arm(events: list[MedAdminEvent], window_hours: float = DEFAULT_WINDOW_HOURS) -> ArmAssignment:
    """Treated iff any steroid administration within the window; else control."""
    if not events:
        return ArmAssignment("", CONTROL)
    pid = events[0].patient_id
    if any(ev.patient_id != pid for ev in events):
        raise ValueError("assign_steroid_arm expects a single patient's events")
    treated = any(ev.drug in STEROID_DRUGS and ev.timestamp <= window_hours for ev in events)
    return ArmAssignment(pid, TREATED if treated else CONTROL)


def assign_fxa_naive_arm(events: list[MedAdminEvent]) -> ArmAssignment:
    """Ever-received factor-XA-inhibitor definition, with no time window.

    This reproduces the flawed "ever treated" coding on purpose: patients
    started on a factor-XA inhibitor just before discharge count as
    treated, which is exactly the artifact the diagnostic suite is meant
    to surface.
    """
    if not events:
        return ArmAssignment("", CONTROL)
    pid = events[0].patient_id
    if any(ev.patient_id != pid for ev in events):
        raise ValueError("assign_fxa_naive_arm expects a single patient's events")
    treated = any(ev.drug in FXA_DRUGS for ev in events)
    return ArmAssignment(pid, TREATED if treated else CONTROL)


@dataclass
class CohortResult:
    """Arm assignment and outcome per patient for one analysis."""

    analysis: str
    assignments: dict[str, ArmAssignment] = field(default_factory=dict)
    outcomes: dict[str, int] = field(default_factory=dict)

    def arm_ids(self, arm: str) -> list[str]:
        return sorted(pid for pid, a in self.assignments.items() if a.arm == arm)

    def exclusion_counts(self) -> dict[str, int]:
        counts: dict[str, int] = defaultdict(int)
        for a in self.assignments.values():
            if a.arm == EXCLUDED:
                counts[a.reason] += 1
        return dict(counts)


def build_cohort(
    analysis: str,
    events_by_patient: dict[str, list[MedAdminEvent]],
    support_records: dict[str, OrganSupportRecord],
    ddimer_values: dict[str, float | None] | None = None,
    window_hours: float = DEFAULT_WINDOW_HOURS,
    ddimer_cutoff: float = DDIMER_CUTOFF_NG_ML,
) -> CohortResult:
    """Assign arms and compute the 21-OSFD outcome for every patient.

    ``analysis`` is one of ac | steroid | fxa. Patients present in
    ``support_records`` but absent from the events table get an empty
    event list (control for steroid/fxa, excluded for ac).
    """
    if analysis not in ("ac", "steroid", "fxa"):
        raise ValueError(f"unknown analysis {analysis!r}")
    result = CohortResult(analysis=analysis)
    for pid in sorted(support_records):
        events = events_by_patient.get(pid, [])
        if analysis == "ac":
            a = assign_ac_arm(events, window_hours) if events else ArmAssignment(pid, EXCLUDED, REASON_NO_AC)
        elif analysis == "steroid":
            a = assign_steroid_arm(events, window_hours) if events else ArmAssignment(pid, CONTROL)
        else:
            a = assign_fxa_naive_arm(events) if events else ArmAssignment(pid, CONTROL)
        if not a.patient_id:
            a = ArmAssignment(pid, a.arm, a.reason)
        result.assignments[pid] = a
        result.outcomes[pid] = osfd21(support_records[pid])

    if analysis == "ac":
        if ddimer_values is None:
            raise ValueError("AC analysis needs baseline D-dimer values")
        updated = apply_ddimer_exclusion(list(result.assignments.values()), ddimer_values, ddimer_cutoff)
        result.assignments = {a.patient_id: a for a in updated}
    return result
