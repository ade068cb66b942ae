"""Synthetic hospital cohorts with confounded treatment and known ground truth.

Three built-in scenarios mirror the structure of the real analyses this
package targets:

* ``steroid`` - sicker patients are more likely to get early steroids, the
  treatment genuinely helps (+1.35 outcome days on the treated), and the
  raw comparison is negative. Adjustment has to flip the sign.
* ``ac`` - aggressive early anticoagulation is driven by the D-dimer lab
  (with near-deterministic treatment above the clinical cutoff) but has no
  true effect. The raw comparison is clearly negative; honest adjustment
  should find nothing.
* ``fxa`` - a naive ever-received definition of factor-XA treatment whose
  assignment tracks a latent recovery/imminent-discharge variable that is
  independent of every observed covariate. No estimator that only sees the
  covariates can remove the bias; the scenario exists to exercise the
  diagnostic signatures (positive raw association, residual post-match
  imbalance).

Outcomes are generated on a latent day scale and mapped to the integer
organ-support-free-day outcome: negative latent values mean in-hospital
death (coded -1), the rest round and cap at 21. All randomness flows from
one ``numpy`` generator per call, so equal seeds give byte-identical
output files.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, asdict

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

DEATH_THRESHOLD = 0.0
OSFD_MAX = 21

RACE_LEVELS = ("white", "black", "hispanic", "asian", "other")
RACE_PROBS = (0.40, 0.25, 0.20, 0.10, 0.05)
SMOKING_LEVELS = ("never", "former", "current")
SMOKING_PROBS = (0.55, 0.30, 0.15)

# lab log-scale (mu, sigma, severity loading); raw value = expm1(mu + sigma*z)
LAB_PARAMS = {
    "l36_crp": (4.2, 0.9, 0.65),
    "l36_ferritin": (6.2, 0.9, 0.50),
    "l36_ldh": (5.9, 0.45, 0.60),
    "l36_lymphocytes": (2.8, 0.5, -0.50),
    "l36_d_dimer": (6.6, 0.9, 0.55),
    # junk panel: high missingness, dropped by the >20% rule downstream
    "l36_procalcitonin": (0.8, 0.9, 0.40),
    "l36_interleukin6": (3.5, 1.0, 0.45),
}
JUNK_LAB_MISSING = {"l36_procalcitonin": 0.40, "l36_interleukin6": 0.32}
CORE_LABS = ("l36_crp", "l36_ferritin", "l36_ldh", "l36_lymphocytes", "l36_d_dimer")

# per-vital: (base, spread, severity loading, measurement sd, lo, hi)
VITAL_PARAMS = {
    "heart_rate": (84.0, 10.0, 0.50, 4.0, 35.0, 190.0),
    "oxygen_saturation": (93.0, 3.5, -0.65, 1.2, 62.0, 100.0),
    "blood_pressure": (121.0, 6.0, -0.30, 6.0, 60.0, 230.0),
    "temperature": (37.5, 0.6, 0.45, 0.25, 34.0, 42.5),
    "respiratory_rate": (22.0, 4.0, 0.55, 1.8, 8.0, 60.0),
}

# frozen affine constants putting model features on a roughly unit scale
FEATURE_SCALES = {
    "age": (62.0, 15.0),
    "cm_charlson": (1.6, 1.5),
    "v24_heart_rate_mean": (84.0, 10.5),
    "v24_oxygen_saturation_min": (90.0, 4.2),
    "v24_respiratory_rate_max": (25.0, 5.0),
    "v24_temperature_max": (38.1, 0.65),
    "v24_blood_pressure_min": (112.0, 10.0),
}

DDIMER_CLINICAL_CUTOFF = 3000.0
FERRITIN_SPOT_MISSING = 0.005  # exercises complete-case row drops


@dataclass(frozen=True)
class ScenarioSpec:
    """Generative recipe for one synthetic cohort.

    ``assignment_coefs`` and ``outcome_coefs`` map feature names (see
    ``POPULATION FEATURES`` in `_population_features`) to coefficients on a
    standardized scale. ``latent_assignment_coef`` weights the unobserved
    recovery variable (standardized outcome noise) in the treatment logit;
    nonzero only for the fxa scenario. ``true_att`` is the target effect on
    the clipped outcome scale; ``treatment_effect_latent`` is the latent
    shift calibrated to produce it.
    """

    name: str
    n: int
    true_att: float
    treated_frac_target: float
    assignment_intercept: float
    assignment_coefs: dict[str, float]
    outcome_intercept: float
    outcome_coefs: dict[str, float]
    treatment_effect_latent: float
    noise_sd: float
    latent_assignment_coef: float = 0.0
    discharge_gate_coef: float = 0.0
    ddimer_missing_frac: float = 0.25
    ddimer_override_prob: float = 0.97  # P(aggressive AC | D-dimer above cutoff)
    prior_ac_override_prob: float = 0.0  # ac: P(therapeutic | outpatient anticoagulant)
    escalation_frac: float = 0.18  # ac: prophylactic starts that later escalate
    no_ac_frac: float = 0.05  # ac: patients with no AC inside any window
    late_steroid_frac: float = 0.03

    def validate(self):
        if self.n < 100:
            raise ValueError("scenario needs n >= 100")
        if not 0.0 < self.treated_frac_target < 1.0:
            raise ValueError("treated fraction target must be in (0, 1)")
        if self.noise_sd <= 0:
            raise ValueError("noise sd must be positive")


# calibrated constants: intercepts hit the prevalence targets below, and the
# steroid latent effect maps to +1.35 days on the clipped outcome scale
_STEROID_TREATED_FRAC = 190.0 / 2282.0
_FXA_TREATED_FRAC = 318.0 / 2281.0
_AC_POST_EXCLUSION_TREATED_FRAC = 0.23

_STEROID_ASSIGN_INTERCEPT = -3.5076
_STEROID_EFFECT_LATENT = 1.6293
_AC_ASSIGN_INTERCEPT = -2.5163
_FXA_ASSIGN_INTERCEPT = -7.6403

_STEROID_ASSIGNMENT = {
    "crp": 0.90,
    "ldh": 0.60,
    "resp_max": 0.50,
    "spo2_min": -0.60,
    "ferritin": 0.30,
    "charlson": 0.25,
    "cm_pulmonary_disease": 0.20,
}
_STEROID_OUTCOME = {
    "age": -1.50,
    "crp": -1.10,
    "ldh": -0.90,
    "lymphocytes": 0.70,
    "spo2_min": 1.10,
    "resp_max": -0.80,
    "charlson": -0.80,
    "cm_heart_failure": -0.70,
    "cm_diabetes": -0.40,
    "cm_cancer": -0.30,
    "temp_max": -0.30,
}

_AC_ASSIGNMENT = {
    "d_dimer": 2.30,
    "crp": 0.65,
    "charlson": 0.40,
    "meds_anticoagulants": 0.40,
    "dd_crp_flare": 2.60,
}
_AC_OUTCOME = {
    "d_dimer": -1.30,
    "age": -1.20,
    "crp": -0.90,
    "lymphocytes": 0.60,
    "spo2_min": 1.00,
    "resp_max": -0.70,
    "charlson": -0.70,
    "cm_heart_failure": -0.60,
}

_FXA_ASSIGNMENT = {
    "age": -0.25,
    "spo2_min": 0.25,
}
_FXA_OUTCOME = dict(_STEROID_OUTCOME)
_FXA_LATENT_COEF = 0.72
_FXA_GATE_COEF = 4.80


def scenario_spec(name: str, n: int | None = None) -> ScenarioSpec:
    """Built-in scenario presets; ``n`` overrides the default cohort size."""
    if name == "steroid":
        spec = ScenarioSpec(
            name="steroid",
            n=n or 2282,
            true_att=1.35,
            treated_frac_target=_STEROID_TREATED_FRAC,
            assignment_intercept=_STEROID_ASSIGN_INTERCEPT,
            assignment_coefs=dict(_STEROID_ASSIGNMENT),
            outcome_intercept=8.3,
            outcome_coefs=dict(_STEROID_OUTCOME),
            treatment_effect_latent=_STEROID_EFFECT_LATENT,
            noise_sd=4.3,
        )
    elif name == "ac":
        spec = ScenarioSpec(
            name="ac",
            n=n or 1200,
            true_att=0.0,
            treated_frac_target=_AC_POST_EXCLUSION_TREATED_FRAC,
            assignment_intercept=_AC_ASSIGN_INTERCEPT,
            assignment_coefs=dict(_AC_ASSIGNMENT),
            outcome_intercept=7.5,
            outcome_coefs=dict(_AC_OUTCOME),
            treatment_effect_latent=0.0,
            noise_sd=4.3,
        )
    elif name == "fxa":
        spec = ScenarioSpec(
            name="fxa",
            n=n or 2281,
            true_att=0.0,
            treated_frac_target=_FXA_TREATED_FRAC,
            assignment_intercept=_FXA_ASSIGN_INTERCEPT,
            assignment_coefs=dict(_FXA_ASSIGNMENT),
            outcome_intercept=8.3,
            outcome_coefs=dict(_FXA_OUTCOME),
            treatment_effect_latent=0.0,
            noise_sd=4.3,
            latent_assignment_coef=_FXA_LATENT_COEF,
            discharge_gate_coef=_FXA_GATE_COEF,
        )
    else:
        raise ValueError(f"unknown scenario {name!r} (use ac | steroid | fxa, or build a ScenarioSpec)")
    spec.validate()
    return spec


def _sigmoid(x):
    out = np.empty_like(x, dtype=float)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ez = np.exp(x[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _scaled(name, values):
    center, scale = FEATURE_SCALES[name]
    return (values - center) / scale


@dataclass
class Population:
    """Raw observables plus the standardized model features derived from them."""

    ids: list[str]
    patients: pd.DataFrame  # raw wide table (pre-masking; NaN injected later)
    features: dict[str, np.ndarray]
    vitals_long: pd.DataFrame
    ddimer_raw: np.ndarray


def _draw_vitals(rng, n, light=False):
    """Per-vital reading matrices, the long table, and 24h summary features.

    The latent severity factor is drawn here and returned so labs and
    comorbidities can load on the same axis. ``light`` skips assembling the
    long-format table (the oracle and calibration paths only need the
    summaries; the feature distribution is unchanged).
    """
    long_frames = []
    summaries = {}
    S = rng.normal(size=n)
    for vital, (base, spread, load, meas_sd, lo, hi) in VITAL_PARAMS.items():
        resid = math.sqrt(max(0.0, 1.0 - load * load))
        level = base + spread * (load * S + resid * rng.normal(size=n))
        k = rng.integers(4, 9, size=n)
        kmax = 8
        t = np.sort(np.round(rng.uniform(0.2, 24.0, size=(n, kmax)), 2), axis=1)
        v = np.round(np.clip(level[:, None] + meas_sd * rng.normal(size=(n, kmax)), lo, hi), 1)
        mask = np.arange(kmax)[None, :] < k[:, None]

        summaries[f"v24_{vital}_mean"] = np.where(mask, v, 0.0).sum(axis=1) / k
        summaries[f"v24_{vital}_min"] = np.where(mask, v, np.inf).min(axis=1)
        summaries[f"v24_{vital}_max"] = np.where(mask, v, -np.inf).max(axis=1)

        if light:
            continue
        pidx = np.repeat(np.arange(n), k)
        long_frames.append(
            pd.DataFrame(
                {
                    "patient_idx": pidx,
                    "vital_name": vital,
                    "hours_since_admission": t[mask],
                    "value": v[mask],
                }
            )
        )
        # a few out-of-window readings to exercise the 24h filter
        extra = rng.random(n) < 0.30
        n_extra = int(extra.sum())
        if n_extra:
            long_frames.append(
                pd.DataFrame(
                    {
                        "patient_idx": np.nonzero(extra)[0],
                        "vital_name": vital,
                        "hours_since_admission": np.round(rng.uniform(24.5, 60.0, size=n_extra), 2),
                        "value": np.round(np.clip(level[extra] + meas_sd * rng.normal(size=n_extra), lo, hi), 1),
                    }
                )
            )
    long = pd.concat(long_frames, ignore_index=True) if long_frames else pd.DataFrame()
    return S, summaries, long


def _draw_population(spec: ScenarioSpec, n: int, rng, light: bool = False) -> Population:
    """Draw observables and derive the standardized model features.

    POPULATION FEATURES available to assignment/outcome models: ``age``,
    ``male``, ``charlson``, the comorbidity and outpatient-med flags by
    column name, short lab names (``crp``, ``ferritin``, ``ldh``,
    ``lymphocytes``, ``d_dimer``), and vitals summary shorthands
    (``hr_mean``, ``spo2_min``, ``resp_max``, ``temp_max``, ``bp_min``).

    ``light`` skips the table assembly (features only; same distribution).
    """
    ids = [f"P{i:06d}" for i in range(n)]
    S_vitals, summaries, vitals_long = _draw_vitals(rng, n, light=light)
    # one shared severity factor: reuse the vitals draw so vitals and labs
    # move together
    S = S_vitals

    age_z = 0.25 * S + math.sqrt(1 - 0.25**2) * rng.normal(size=n)
    age = np.clip(np.round(62 + 15 * age_z), 18, 97)

    male = (rng.random(n) < 0.55).astype(float)
    smoking = rng.choice(SMOKING_LEVELS, size=n, p=SMOKING_PROBS)
    race = rng.choice(RACE_LEVELS, size=n, p=RACE_PROBS)

    cm_diabetes = (rng.random(n) < _sigmoid(-0.95 + 0.5 * S)).astype(float)
    cm_heart_failure = (rng.random(n) < _sigmoid(-2.1 + 0.6 * S)).astype(float)
    cm_pulmonary_disease = (rng.random(n) < _sigmoid(-1.9 + 0.4 * S)).astype(float)
    cm_cancer = (rng.random(n) < _sigmoid(-2.6 + 0.3 * S)).astype(float)
    charlson = np.clip(
        np.round(1.1 + 1.0 * S + 0.9 * rng.normal(size=n) + 0.5 * (cm_diabetes + cm_heart_failure + cm_cancer)),
        0,
        14,
    )

    meds_anticoagulants = (rng.random(n) < _sigmoid(-2.4 + 0.3 * S)).astype(float)
    meds_antihyperglycemics = (rng.random(n) < _sigmoid(-2.6 + 2.2 * cm_diabetes)).astype(float)
    meds_cardiovascular = (rng.random(n) < _sigmoid(-1.5 + 0.8 * cm_heart_failure + 0.3 * S)).astype(float)

    labs = {}
    for lab, (mu, sigma, load) in LAB_PARAMS.items():
        resid = math.sqrt(max(0.0, 1.0 - load * load))
        z = load * S + resid * rng.normal(size=n)
        labs[lab] = np.round(np.expm1(np.maximum(mu + sigma * z, 0.0)), 1)

    if light:
        patients = pd.DataFrame()
    else:
        patients = pd.DataFrame({"patient_id": ids})
        patients["age"] = age.astype(int)
        patients["sex"] = np.where(male == 1.0, "male", "female")
        patients["race"] = race
        patients["smoking_status"] = smoking
        patients["cm_diabetes"] = cm_diabetes.astype(int)
        patients["cm_heart_failure"] = cm_heart_failure.astype(int)
        patients["cm_pulmonary_disease"] = cm_pulmonary_disease.astype(int)
        patients["cm_cancer"] = cm_cancer.astype(int)
        patients["cm_charlson"] = charlson.astype(int)
        patients["meds_anticoagulants"] = meds_anticoagulants.astype(int)
        patients["meds_antihyperglycemics"] = meds_antihyperglycemics.astype(int)
        patients["meds_cardiovascular"] = meds_cardiovascular.astype(int)
        for lab in LAB_PARAMS:
            patients[lab] = labs[lab]

    features = {
        "age": _scaled("age", age),
        "male": male,
        "charlson": _scaled("cm_charlson", charlson),
        "cm_diabetes": cm_diabetes,
        "cm_heart_failure": cm_heart_failure,
        "cm_pulmonary_disease": cm_pulmonary_disease,
        "cm_cancer": cm_cancer,
        "meds_anticoagulants": meds_anticoagulants,
        "meds_antihyperglycemics": meds_antihyperglycemics,
        "meds_cardiovascular": meds_cardiovascular,
        "hr_mean": _scaled("v24_heart_rate_mean", summaries["v24_heart_rate_mean"]),
        "spo2_min": _scaled("v24_oxygen_saturation_min", summaries["v24_oxygen_saturation_min"]),
        "resp_max": _scaled("v24_respiratory_rate_max", summaries["v24_respiratory_rate_max"]),
        "temp_max": _scaled("v24_temperature_max", summaries["v24_temperature_max"]),
        "bp_min": _scaled("v24_blood_pressure_min", summaries["v24_blood_pressure_min"]),
    }
    for lab, (mu, sigma, _) in LAB_PARAMS.items():
        short = lab.removeprefix("l36_")
        features[short] = (np.log1p(labs[lab]) - mu) / sigma
    # joint coagulation/inflammation flare: the profile that made clinicians
    # reach for the aggressive strategy without consulting a score
    features["dd_crp_flare"] = ((features["d_dimer"] > 0.7) & (features["crp"] > 0.1)).astype(float)

    if not light:
        vitals_long = vitals_long.assign(patient_id=[ids[i] for i in vitals_long["patient_idx"]]).drop(
            columns="patient_idx"
        )[["patient_id", "vital_name", "hours_since_admission", "value"]]

    return Population(
        ids=ids,
        patients=patients,
        features=features,
        vitals_long=vitals_long,
        ddimer_raw=labs["l36_d_dimer"],
    )


def _linear_score(features: dict[str, np.ndarray], coefs: dict[str, float], intercept: float) -> np.ndarray:
    missing = set(coefs) - set(features)
    if missing:
        raise ValueError(f"model references unknown features: {sorted(missing)}")
    n = len(next(iter(features.values())))
    score = np.full(n, intercept, dtype=float)
    for name in sorted(coefs):
        score += coefs[name] * features[name]
    return score


def _discharge_ready(features: dict[str, np.ndarray]) -> np.ndarray:
    """Sharp nonlinear profile of a patient stable enough to send home.

    Two AND-gates (stable vitals in a younger patient; inflammation clearly
    resolving). A plain logistic propensity model only sees the additive
    pieces of these interactions, so the matched controls systematically
    differ on the gate covariates: the residual-imbalance signature of the
    fxa scenario.
    """
    vitals_gate = (
        (features["age"] < 0.0)
        & (features["spo2_min"] > 0.0)
        & (features["resp_max"] < 0.0)
    ).astype(float)
    recovery_gate = ((features["crp"] < -0.3) & (features["lymphocytes"] > 0.2)).astype(float)
    return vitals_gate + 1.4 * recovery_gate


def _assignment_probability(spec: ScenarioSpec, pop: Population, eps_std: np.ndarray | None) -> np.ndarray:
    score = _linear_score(pop.features, spec.assignment_coefs, spec.assignment_intercept)
    if spec.latent_assignment_coef != 0.0:
        if eps_std is None:
            raise ValueError("latent assignment requires the outcome noise draw")
        score = score + spec.latent_assignment_coef * eps_std
    if spec.discharge_gate_coef != 0.0:
        score = score + spec.discharge_gate_coef * _discharge_ready(pop.features)
    p = _sigmoid(score)
    if spec.name == "ac":
        # hospital practice: extreme D-dimer nearly always gets the
        # aggressive strategy, regardless of everything else
        p = np.where(pop.ddimer_raw > DDIMER_CLINICAL_CUTOFF, spec.ddimer_override_prob, p)
        if spec.prior_ac_override_prob > 0.0:
            # home anticoagulation is continued at treatment dose with
            # near-certainty; outcome-neutral by construction, but it packs
            # a slab of treated into a ps region with almost no controls
            prior = pop.features["meds_anticoagulants"] == 1.0
            p = np.where(prior, np.maximum(p, spec.prior_ac_override_prob), p)
    return p


def clip_to_osfd(latent: np.ndarray) -> np.ndarray:
    """Latent day scale -> integer outcome: death below 0, else round & cap."""
    latent = np.asarray(latent, dtype=float)
    died = latent < DEATH_THRESHOLD
    return np.where(died, -1, np.clip(np.rint(latent), 0, OSFD_MAX)).astype(int)


@dataclass
class SimulatedCohort:
    """Everything a pipeline run ingests, plus ground-truth bookkeeping."""

    spec: ScenarioSpec
    seed: int
    patients: pd.DataFrame
    vitals: pd.DataFrame
    med_events: pd.DataFrame
    organ_support: pd.DataFrame
    outcomes: pd.DataFrame
    truth: dict = field(default_factory=dict)


def _steroid_events(rng, ids, treated, late_control_frac):
    rows = []
    drugs = rng.choice(["dexamethasone", "hydrocortisone", "prednisone"], size=len(ids), p=[0.7, 0.15, 0.15])
    doses = {"dexamethasone": 6.0, "hydrocortisone": 50.0, "prednisone": 40.0}
    t_treated = np.round(rng.uniform(2.0, 70.0, size=len(ids)), 1)
    late = rng.random(len(ids)) < late_control_frac
    t_late = np.round(rng.uniform(73.0, 160.0, size=len(ids)), 1)
    for i, pid in enumerate(ids):
        if treated[i]:
            rows.append((pid, drugs[i], doses[drugs[i]], "intravenous" if drugs[i] != "prednisone" else "oral", t_treated[i]))
        elif late[i]:
            rows.append((pid, drugs[i], doses[drugs[i]], "oral", t_late[i]))
    return rows


def _background_prophylaxis(rng, ids, skip_frac=0.08):
    """Most inpatients get prophylactic subcutaneous heparin early on."""
    rows = []
    skip = rng.random(len(ids)) < skip_frac
    t0 = np.round(np.maximum(rng.normal(8.0, 3.0, size=len(ids)), 0.5), 1)
    for i, pid in enumerate(ids):
        if skip[i]:
            continue
        for offset in (0.0, 8.0, 16.0):
            rows.append((pid, "heparin", 5000.0, "subcutaneous", round(t0[i] + offset, 1)))
    return rows


def _fxa_events(rng, ids, treated, osfd):
    """Factor-XA starts cluster near the end of stay, as the ward practice did."""
    rows = []
    drugs = np.where(rng.random(len(ids)) < 0.95, "apixaban", "rivaroxaban")
    for i, pid in enumerate(ids):
        if not treated[i]:
            continue
        # better outcomes leave earlier: start hour shrinks with recovery
        stay_days = 4.0 + max(0, OSFD_MAX - max(osfd[i], 0)) * 0.8 + rng.uniform(0, 3)
        start = max(24.0, stay_days * 24.0 - rng.uniform(24.0, 60.0))
        dose = 5.0 if drugs[i] == "apixaban" else 15.0
        rows.append((pid, drugs[i], dose, "oral", round(start, 1)))
    return rows


def _ac_events(rng, ids, intent_therapeutic, escalation_frac, no_ac_frac):
    """Anticoagulation orders realizing the intended arm, with impurities.

    A slice of prophylactic starters escalates to therapeutic dosing at a
    random hour (excluded when the switch lands inside the analysis
    window); a small group has no anticoagulation inside any window; a few
    therapeutic courses run as high-total subcutaneous heparin to exercise
    that classification edge.
    """
    rows = []
    n = len(ids)
    u_drug = rng.random(n)
    t0 = np.round(rng.uniform(1.0, 18.0, size=n), 1)
    escalate = rng.random(n) < escalation_frac
    t_esc = np.round(rng.uniform(10.0, 110.0, size=n), 1)
    no_ac = rng.random(n) < no_ac_frac
    t_late = np.round(rng.uniform(98.0, 150.0, size=n), 1)
    high_subq = rng.random(n) < 0.02

    for i, pid in enumerate(ids):
        if no_ac[i]:
            # half get nothing at all, half only a late course
            if u_drug[i] < 0.5:
                rows.append((pid, "heparin", 5000.0, "subcutaneous", t_late[i]))
            continue
        if intent_therapeutic[i]:
            if high_subq[i]:
                for offset in (0.0, 8.0, 16.0):
                    rows.append((pid, "heparin", 7500.0, "subcutaneous", round(t0[i] + offset, 1)))
            elif u_drug[i] < 0.70:
                for offset in (0.0, 12.0, 24.0):
                    rows.append((pid, "heparin", 4000.0, "intravenous", round(t0[i] + offset, 1)))
            elif u_drug[i] < 0.90:
                rows.append((pid, "enoxaparin", 80.0, "subcutaneous", t0[i]))
                rows.append((pid, "enoxaparin", 80.0, "subcutaneous", round(t0[i] + 12.0, 1)))
            else:
                rows.append((pid, "rivaroxaban", 15.0, "oral", t0[i]))
        else:
            if u_drug[i] < 0.65:
                for offset in (0.0, 8.0, 16.0):
                    rows.append((pid, "heparin", 5000.0, "subcutaneous", round(t0[i] + offset, 1)))
            else:
                rows.append((pid, "enoxaparin", 40.0, "subcutaneous", t0[i]))
            if escalate[i] and t_esc[i] > t0[i]:
                rows.append((pid, "heparin", 4000.0, "intravenous", t_esc[i]))
    return rows


def _organ_support_tables(rng, ids, osfd, died):
    """Realize each outcome as an organ-support calendar + death flag."""
    support_rows = []
    outcome_rows = []
    types = ("pressors", "renal_replacement", "high_flow_oxygen", "invasive_ventilation")
    for i, pid in enumerate(ids):
        if died[i]:
            n_days = int(rng.integers(1, 15))
        else:
            n_days = OSFD_MAX - int(osfd[i])
        for day in range(n_days):
            kind = types[int(rng.integers(0, len(types)))]
            support_rows.append((pid, day, kind))
            if rng.random() < 0.15:  # second support type on the same day
                other = types[int(rng.integers(0, len(types)))]
                if other != kind:
                    support_rows.append((pid, day, other))
        if not died[i] and n_days > 0 and rng.random() < 0.08:
            # support continuing past the 21-day horizon must not count
            support_rows.append((pid, 21, types[int(rng.integers(0, len(types)))]))
        observed = 21 + int(rng.integers(0, 20))
        outcome_rows.append((pid, bool(died[i]), observed))
    support = pd.DataFrame(support_rows, columns=["patient_id", "day_index", "support_type"])
    outcomes = pd.DataFrame(outcome_rows, columns=["patient_id", "died", "observed_days"])
    return support, outcomes


def generate_cohort(spec: ScenarioSpec, seed: int) -> SimulatedCohort:
    """Draw one full synthetic cohort in the raw-table formats the pipeline reads."""
    spec.validate()
    rng = np.random.default_rng(seed)
    pop = _draw_population(spec, spec.n, rng)
    n = spec.n

    eps = rng.normal(size=n) * spec.noise_sd
    eps_std = eps / spec.noise_sd

    p_treat = _assignment_probability(spec, pop, eps_std)
    treated = rng.random(n) < p_treat

    mu = _linear_score(pop.features, spec.outcome_coefs, spec.outcome_intercept)
    latent = mu + spec.treatment_effect_latent * treated + eps
    osfd = clip_to_osfd(latent)
    died = osfd == -1

    if spec.name == "steroid":
        med_rows = _background_prophylaxis(rng, pop.ids) + _steroid_events(
            rng, pop.ids, treated, spec.late_steroid_frac
        )
    elif spec.name == "fxa":
        med_rows = _background_prophylaxis(rng, pop.ids) + _fxa_events(rng, pop.ids, treated, osfd)
    elif spec.name == "ac":
        med_rows = _ac_events(rng, pop.ids, treated, spec.escalation_frac, spec.no_ac_frac)
    else:
        med_rows = _background_prophylaxis(rng, pop.ids)

    med_events = pd.DataFrame(med_rows, columns=["patient_id", "drug", "dose", "route", "hours_since_admission"])
    med_events["units"] = np.where(med_events["drug"] == "heparin", "units", "mg")
    med_events = med_events[["patient_id", "drug", "dose", "units", "route", "hours_since_admission"]]
    med_events = med_events.sort_values(["patient_id", "hours_since_admission", "drug"], kind="stable").reset_index(
        drop=True
    )

    support, outcomes = _organ_support_tables(rng, pop.ids, osfd, died)

    patients = pop.patients.copy()
    mask_dd = rng.random(n) < spec.ddimer_missing_frac
    patients.loc[mask_dd, "l36_d_dimer"] = np.nan
    for lab, frac in JUNK_LAB_MISSING.items():
        patients.loc[rng.random(n) < frac, lab] = np.nan
    patients.loc[rng.random(n) < FERRITIN_SPOT_MISSING, "l36_ferritin"] = np.nan

    complete_core = int(patients[list(CORE_LABS)].drop(columns="l36_d_dimer").notna().all(axis=1).sum())
    q = np.quantile(pop.ddimer_raw, [1 / 3, 2 / 3])
    truth = {
        "scenario": spec.name,
        "seed": seed,
        "n": n,
        "true_att": spec.true_att,
        "death_threshold": DEATH_THRESHOLD,
        "treated_count": int(treated.sum()),
        "treated_frac_target": spec.treated_frac_target,
        "death_count": int(died.sum()),
        "complete_case_count": complete_core,
        "ddimer_missing_count": int(mask_dd.sum()),
        "ddimer_above_cutoff_count": int((pop.ddimer_raw > DDIMER_CLINICAL_CUTOFF).sum()),
        "ddimer_bands": {
            "tertiles": [round(float(q[0]), 1), round(float(q[1]), 1)],
            "clinical_cutoff": DDIMER_CLINICAL_CUTOFF,
        },
        "outcome_mean": float(np.mean(osfd)),
    }

    return SimulatedCohort(
        spec=spec,
        seed=seed,
        patients=patients,
        vitals=pop.vitals_long,
        med_events=med_events,
        organ_support=support,
        outcomes=outcomes,
        truth=truth,
    )


@dataclass
class OracleResult:
    att: float
    mc_se: float
    n_mc: int


def oracle_att(spec: ScenarioSpec, n_mc: int = 100_000, seed: int = 0) -> OracleResult:
    """Ground-truth ATT by simulating both potential outcomes per patient.

    Each simulated patient gets the treatment forced off and on with the
    same noise draw; the difference of clipped outcomes is averaged under
    the treated-assignment distribution (probability weights). Entirely
    independent of the estimation stack.
    """
    rng = np.random.default_rng(seed)
    chunk = 200_000
    sum_pd = 0.0  # sum p*delta
    sum_p = 0.0
    sum_p2d2 = 0.0  # sum (p*delta)^2
    sum_p2d = 0.0  # sum p^2*delta
    sum_p2 = 0.0
    remaining = n_mc
    while remaining > 0:
        m = min(chunk, remaining)
        remaining -= m
        pop = _draw_population(spec, m, rng, light=True)
        eps = rng.normal(size=m) * spec.noise_sd
        p = _assignment_probability(spec, pop, eps / spec.noise_sd)
        mu = _linear_score(pop.features, spec.outcome_coefs, spec.outcome_intercept)
        delta = clip_to_osfd(mu + spec.treatment_effect_latent + eps) - clip_to_osfd(mu + eps)
        sum_pd += float(np.sum(p * delta))
        sum_p += float(np.sum(p))
        sum_p2d2 += float(np.sum((p * delta) ** 2))
        sum_p2d += float(np.sum(p * p * delta))
        sum_p2 += float(np.sum(p * p))
    att = sum_pd / sum_p
    # linearized variance of the ratio estimator sum(p*delta)/sum(p)
    var = (sum_p2d2 - 2.0 * att * sum_p2d + att * att * sum_p2) / (sum_p * sum_p)
    return OracleResult(att=att, mc_se=math.sqrt(max(var, 0.0)), n_mc=n_mc)


def write_cohort_files(cohort: SimulatedCohort, out_dir) -> dict[str, str]:
    """Write the five raw tables plus truth.json; returns written paths."""
    from pathlib import Path

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    frames = {
        "patients.csv": cohort.patients,
        "vitals.csv": cohort.vitals,
        "med_events.csv": cohort.med_events,
        "organ_support.csv": cohort.organ_support,
        "outcomes.csv": cohort.outcomes,
    }
    for name, df in frames.items():
        path = out / name
        df.to_csv(path, index=False)
        paths[name] = str(path)
    truth = dict(cohort.truth)
    truth["spec"] = asdict(cohort.spec)
    tpath = out / "truth.json"
    tpath.write_text(json.dumps(truth, indent=2, sort_keys=True))
    paths["truth.json"] = str(tpath)
    logger.info("wrote %d files to %s", len(paths), out)
    return paths
