"""Propensity-score ratio matching with a caliper, plus balance diagnostics."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

DEFAULT_RATIO = 3
DEFAULT_CALIPER = 0.05
REASON_NO_CONTROL = "no-control-within-caliper"


@dataclass(frozen=True)
class MatchPair:
    treated_id: str
    control_ids: tuple[str, ...]
    distances: tuple[float, ...]


@dataclass
class MatchedSet:
    """Matches, accumulated control weights, and the treated we had to drop.

    Each retained treated unit distributes total weight 1 across its
    matched controls, so control weights sum to the number of matched
    treated units.
    """

    matches: list[MatchPair]
    control_weights: dict[str, float]
    dropped_treated: list[tuple[str, str]]
    caliper_used: float  # absolute distance on the propensity scale
    caliper_unit: str
    ratio: int
    replace: bool

    @property
    def treated_ids(self) -> list[str]:
        return [m.treated_id for m in self.matches]

    @property
    def n_matched_treated(self) -> int:
        return len(self.matches)

    @property
    def matched_fraction(self) -> float:
        total = len(self.matches) + len(self.dropped_treated)
        return len(self.matches) / total if total else float("nan")

    def validate(self):
        for m in self.matches:
            if not 1 <= len(m.control_ids) <= self.ratio:
                raise AssertionError(f"{m.treated_id}: {len(m.control_ids)} controls outside [1, {self.ratio}]")
            if any(d > self.caliper_used for d in m.distances):
                raise AssertionError(f"{m.treated_id}: match distance beyond caliper")
        wsum = sum(self.control_weights.values())
        if self.matches and abs(wsum - len(self.matches)) > 1e-9 * max(1, len(self.matches)):
            raise AssertionError("control weights do not sum to matched treated count")


def _as_id_value_arrays(scores) -> tuple[list[str], np.ndarray]:
    """Mapping/Series of propensity scores -> (ids sorted asc, values)."""
    if isinstance(scores, pd.Series):
        items = list(scores.items())
    else:
        items = list(scores.items())
    items.sort(key=lambda kv: str(kv[0]))
    ids = [str(k) for k, _ in items]
    vals = np.asarray([float(v) for _, v in items])
    return ids, vals


def resolve_caliper(caliper: float, caliper_unit: str, pooled_scores: np.ndarray) -> float:
    """Caliper on the absolute propensity scale.

    ``sd`` units multiply by the sample standard deviation of the pooled
    scores, mirroring the convention of the usual matching tooling;
    ``absolute`` passes through.
    """
    if caliper_unit == "absolute":
        return float(caliper)
    if caliper_unit == "sd":
        return float(caliper) * float(np.std(pooled_scores, ddof=1))
    raise ValueError(f"unknown caliper_unit {caliper_unit!r}")


def match_nearest_caliper(
    ps_treated,
    ps_control,
    ratio: int = DEFAULT_RATIO,
    caliper: float = DEFAULT_CALIPER,
    caliper_unit: str = "sd",
    replace: bool = True,
    seed: int | None = None,
) -> MatchedSet:
    """Nearest-neighbor ratio matching on the propensity score.

    Treated units are processed hardest-first (descending propensity, ties
    by id); each takes up to ``ratio`` nearest controls within the caliper.
    Control ties at equal distance break toward smaller ids, so output is
    invariant to input row order. With ``replace=False`` a control is
    consumed by the first treated that takes it. Treated units with no
    in-caliper control are dropped and reported, not matched farther away.

    ``seed`` is accepted for pipeline-config symmetry; the algorithm is
    deterministic and never draws from it.
    """
    del seed
    if ratio < 1:
        raise ValueError("ratio must be >= 1")
    t_ids, t_ps = _as_id_value_arrays(ps_treated)
    c_ids, c_ps = _as_id_value_arrays(ps_control)
    if len(c_ids) == 0:
        raise ValueError("empty control pool")
    for name, vals in (("treated", t_ps), ("control", c_ps)):
        if vals.size and (vals.min() <= 0.0 or vals.max() >= 1.0):
            raise ValueError(f"{name} propensity scores must lie strictly in (0, 1)")

    cal = resolve_caliper(caliper, caliper_unit, np.concatenate([t_ps, c_ps]))

    # descending propensity; id order (already sorted) breaks ties stably
    t_order = np.argsort(-t_ps, kind="stable")

    available = np.ones(len(c_ids), dtype=bool)
    id_rank = np.arange(len(c_ids))  # c_ids sorted ascending: rank == id order
    matches: list[MatchPair] = []
    weights: dict[str, float] = {}
    dropped: list[tuple[str, str]] = []

    for ti in t_order:
        d = np.abs(c_ps - t_ps[ti])
        ok = d <= cal
        if not replace:
            ok &= available
        cand = np.nonzero(ok)[0]
        if cand.size == 0:
            dropped.append((t_ids[ti], REASON_NO_CONTROL))
            continue
        order = np.lexsort((id_rank[cand], d[cand]))
        take = cand[order[:ratio]]
        if not replace:
            available[take] = False
        ctrl = tuple(c_ids[j] for j in take)
        matches.append(MatchPair(t_ids[ti], ctrl, tuple(float(d[j]) for j in take)))
        share = 1.0 / len(take)
        for cid in ctrl:
            weights[cid] = weights.get(cid, 0.0) + share

    matches.sort(key=lambda m: m.treated_id)
    dropped.sort()
    result = MatchedSet(
        matches=matches,
        control_weights=weights,
        dropped_treated=dropped,
        caliper_used=cal,
        caliper_unit=caliper_unit,
        ratio=ratio,
        replace=replace,
    )
    result.validate()
    logger.info(
        "matched %d/%d treated (%.0f%%), caliper %.4g (%s)",
        result.n_matched_treated,
        result.n_matched_treated + len(dropped),
        100 * result.matched_fraction if result.matches or dropped else float("nan"),
        cal,
        caliper_unit,
    )
    return result


@dataclass
class BalanceRow:
    covariate: str
    smd_pre: float
    smd_post: float
    zero_treated_variance: bool = False


def smd_balance(
    covariates: pd.DataFrame,
    arms: dict[str, str],
    control_weights: dict[str, float] | None = None,
    matched_treated_ids: list[str] | None = None,
) -> pd.DataFrame:
    """Standardized mean differences before and after matching.

    SMD = (treated mean - control mean) / treated-group sd, with the
    pre-match (full treated group) sd used as the denominator for both
    columns so bars stay comparable; for binary covariates this is the raw
    proportion difference over the treated sd. Post-match means weight
    controls by their accumulated match weights and restrict treated to
    the matched set. A covariate with zero treated variance is reported as
    the raw mean difference and flagged.
    """
    t_all = sorted(pid for pid, a in arms.items() if a == "treated")
    c_all = sorted(pid for pid, a in arms.items() if a == "control")
    if not t_all or not c_all:
        raise ValueError("need both treated and control rows for balance")

    t_post = sorted(matched_treated_ids) if matched_treated_ids is not None else t_all
    rows = []
    for col in covariates.columns:
        x_t = covariates.loc[t_all, col].to_numpy(dtype=float)
        x_c = covariates.loc[c_all, col].to_numpy(dtype=float)
        sd_t = float(np.std(x_t, ddof=1)) if len(x_t) > 1 else 0.0

        pre_diff = float(np.mean(x_t) - np.mean(x_c))
        if control_weights is not None:
            w_ids = sorted(cid for cid, w in control_weights.items() if w > 0)
            x_cw = covariates.loc[w_ids, col].to_numpy(dtype=float)
            w = np.asarray([control_weights[cid] for cid in w_ids])
            x_tp = covariates.loc[t_post, col].to_numpy(dtype=float)
            post_diff = float(np.mean(x_tp) - float(np.sum(w * x_cw) / np.sum(w)))
        else:
            post_diff = float("nan")

        if sd_t == 0.0:
            rows.append(BalanceRow(col, pre_diff, post_diff, zero_treated_variance=True))
        else:
            rows.append(BalanceRow(col, pre_diff / sd_t, post_diff / sd_t))

    return pd.DataFrame(
        {
            "covariate": [r.covariate for r in rows],
            "smd_pre": [r.smd_pre for r in rows],
            "smd_post": [r.smd_post for r in rows],
            "zero_treated_variance": [r.zero_treated_variance for r in rows],
        }
    )


def overlap_histogram(ps_treated, ps_control, bins: int = 30) -> pd.DataFrame:
    """Binned propensity counts per arm over common edges on [0, 1]."""
    if bins < 2:
        raise ValueError("need at least 2 bins")
    _, t_ps = _as_id_value_arrays(ps_treated)
    _, c_ps = _as_id_value_arrays(ps_control)
    edges = np.linspace(0.0, 1.0, bins + 1)
    n_t, _ = np.histogram(t_ps, bins=edges)
    n_c, _ = np.histogram(c_ps, bins=edges)
    return pd.DataFrame(
        {
            "bin_lo": edges[:-1],
            "bin_hi": edges[1:],
            "n_treated": n_t.astype(int),
            "n_control": n_c.astype(int),
        }
    )
