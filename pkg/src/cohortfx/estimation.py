"""Effect estimates: unadjusted difference, regression-adjusted, matched ATT.

All three return the same ``EffectEstimate`` record so reports and the
forest output can treat them uniformly. The covariate screen used for
balance reporting (union of lasso-selected predictors of outcome and of
treatment) lives here too.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, asdict

import numpy as np

from .glm import DesignMatrix, cv_select_lambda, fit_ols_robust
from .matching import MatchedSet

logger = logging.getLogger(__name__)

Z95 = 1.96

UNADJUSTED = "unadjusted"
REGRESSION = "regression"
MATCHED = "matched"


def _normal_sf(z: float) -> float:
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def _two_sided_p(point: float, se: float) -> float:
    if se == 0.0:
        return 1.0 if point == 0.0 else 0.0
    return 2.0 * _normal_sf(abs(point) / se)


@dataclass
class EffectEstimate:
    """Point estimate of the treatment effect in outcome days."""

    estimator: str  # unadjusted | regression | matched
    point: float
    se: float
    ci95: tuple[float, float]
    n_treated_used: int
    n_control_used: int
    p_value: float  # two-sided, normal approximation
    p_value_one_sided: float | None = None  # H1: effect > 0 (matched only)

    @classmethod
    def from_point_se(cls, estimator, point, se, n_treated, n_control, one_sided=False):
        est = cls(
            estimator=estimator,
            point=float(point),
            se=float(se),
            ci95=(float(point - Z95 * se), float(point + Z95 * se)),
            n_treated_used=int(n_treated),
            n_control_used=int(n_control),
            p_value=_two_sided_p(point, se),
        )
        if one_sided:
            est.p_value_one_sided = _normal_sf(point / se) if se > 0 else (0.0 if point > 0 else 1.0)
        return est

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ci95"] = {"lo": self.ci95[0], "hi": self.ci95[1]}
        return d


def unadjusted_diff(outcomes: dict[str, float], arms: dict[str, str]) -> EffectEstimate:
    """Difference in mean outcomes with a Welch standard error."""
    y_t = np.asarray([outcomes[p] for p, a in sorted(arms.items()) if a == "treated"], dtype=float)
    y_c = np.asarray([outcomes[p] for p, a in sorted(arms.items()) if a == "control"], dtype=float)
    if len(y_t) == 0 or len(y_c) == 0:
        raise ValueError("both arms must be non-empty")
    point = float(y_t.mean() - y_c.mean())
    var_t = float(y_t.var(ddof=1)) if len(y_t) > 1 else 0.0
    var_c = float(y_c.var(ddof=1)) if len(y_c) > 1 else 0.0
    se = math.sqrt(var_t / len(y_t) + var_c / len(y_c))
    return EffectEstimate.from_point_se(UNADJUSTED, point, se, len(y_t), len(y_c))


def regression_adjusted_att(
    X: DesignMatrix,
    treatment: np.ndarray,
    outcomes: np.ndarray,
) -> EffectEstimate:
    """Coefficient on the treatment indicator, adjusting linearly for covariates.

    With a small treated share this approximates the effect on the treated;
    the standard error is heteroskedasticity-robust (HC1). Rows of ``X``,
    ``treatment`` and ``outcomes`` must be aligned.
    """
    treatment = np.asarray(treatment, dtype=float)
    design = DesignMatrix(
        np.column_stack([treatment, X.values]) if X.p else treatment[:, None],
        ["treatment"] + list(X.columns),
    )
    fit = fit_ols_robust(design, np.asarray(outcomes, dtype=float))
    point = float(fit.coefficients[0])
    se = float(fit.standard_errors[1])  # intercept occupies slot 0
    n_t = int(treatment.sum())
    return EffectEstimate.from_point_se(REGRESSION, point, se, n_t, len(treatment) - n_t)


def matched_att(
    matched: MatchedSet,
    outcomes: dict[str, float],
    bootstrap: bool = False,
    bootstrap_reps: int = 1000,
    seed: int = 0,
) -> EffectEstimate:
    """ATT over the matched set: mean of (treated y - mean matched-control y).

    The default standard error is analytic and weight-aware: the estimator
    is a treated mean minus a weighted control mean, and reused controls
    inflate the weighted-mean variance through their squared weights. Set
    ``bootstrap=True`` for a seeded cluster bootstrap instead (treated
    units resampled together with their matched controls, 1000 reps by
    default).
    """
    if not matched.matches:
        raise ValueError("matched set is empty")
    n_t = len(matched.matches)
    diffs = np.asarray(
        [outcomes[m.treated_id] - np.mean([outcomes[c] for c in m.control_ids]) for m in matched.matches]
    )
    point = float(diffs.mean())

    if bootstrap:
        rng = np.random.default_rng(seed)
        idx = rng.integers(0, n_t, size=(bootstrap_reps, n_t))
        reps = diffs[idx].mean(axis=1)
        se = float(reps.std(ddof=1))
    else:
        y_t = np.asarray([outcomes[m.treated_id] for m in matched.matches])
        w_ids = sorted(cid for cid, w in matched.control_weights.items() if w > 0)
        w = np.asarray([matched.control_weights[c] for c in w_ids])
        y_c = np.asarray([outcomes[c] for c in w_ids])
        w_norm = w / w.sum()
        var_t = float(y_t.var(ddof=1)) if n_t > 1 else 0.0
        mean_cw = float(np.sum(w_norm * y_c))
        if len(y_c) > 1:
            var_c = float(np.sum(w_norm * (y_c - mean_cw) ** 2) / (1.0 - np.sum(w_norm**2)))
        else:
            var_c = 0.0
        se = math.sqrt(var_t / n_t + var_c * float(np.sum(w_norm**2)))

    n_c = sum(1 for w in matched.control_weights.values() if w > 0)
    return EffectEstimate.from_point_se(MATCHED, point, se, n_t, n_c, one_sided=True)


def select_important_covariates(
    X: DesignMatrix,
    outcomes: np.ndarray,
    treatment: np.ndarray,
    seed: int = 0,
    folds: int = 10,
    rule: str = "min",
) -> list[str]:
    """Union of covariates picked by outcome and treatment lasso screens.

    Two cross-validated L1 fits - a linear model for the outcome and a
    logistic model for treatment - each keep their nonzero-coefficient
    covariates; the union is returned sorted. Deliberately conservative:
    only variables touching both models can confound, but reporting the
    union errs toward showing more balance rows.
    """
    if X.p < 2:
        raise ValueError("need at least 2 covariates to screen")
    cv_out = cv_select_lambda(X, np.asarray(outcomes, dtype=float), family="linear", folds=folds, rule=rule, seed=seed)
    cv_trt = cv_select_lambda(
        X, np.asarray(treatment, dtype=float), family="logistic", folds=folds, rule=rule, seed=seed + 1
    )
    union = sorted(set(cv_out.active_set) | set(cv_trt.active_set))
    logger.info(
        "covariate screen: %d from outcome model, %d from treatment model, %d in union",
        len(cv_out.active_set),
        len(cv_trt.active_set),
        len(union),
    )
    return union
