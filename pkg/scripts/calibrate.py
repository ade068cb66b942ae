#!/usr/bin/env python3
"""Re-derive the frozen scenario constants in cohortfx.synth.

Solves, on large Monte-Carlo samples:
  * assignment intercepts hitting each scenario's treated-fraction target
    (for ac: the post-exclusion fraction, via the full event machinery)
  * the steroid latent treatment shift whose clipped-scale ATT is +1.35

Run after changing any scenario coefficient, then paste the printed
constants into synth.py. Two passes are needed: the treatment-effect
solve weights patients by the assignment model, so paste the intercepts
first and rerun for the final latent-effect value.
"""

import numpy as np

from cohortfx import synth
from cohortfx.pipeline import PipelineConfig, RawTables, build_cohort_from_tables


def assignment_parts(name, n, seed):
    spec = synth.scenario_spec(name)
    rng = np.random.default_rng(seed)
    pop = synth._draw_population(spec, n, rng, light=True)
    eps_std = rng.normal(size=n)
    score0 = synth._linear_score(pop.features, spec.assignment_coefs, 0.0)
    if spec.latent_assignment_coef:
        score0 = score0 + spec.latent_assignment_coef * eps_std
    if spec.discharge_gate_coef:
        score0 = score0 + spec.discharge_gate_coef * synth._discharge_ready(pop.features)
    override = pop.ddimer_raw > synth.DDIMER_CLINICAL_CUTOFF if name == "ac" else None
    return spec, score0, override


def solve_intercept(score0, target, override=None, override_p=0.97):
    lo, hi = -10.0, 5.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        p = 1.0 / (1.0 + np.exp(-(score0 + mid)))
        if override is not None:
            p = np.where(override, override_p, p)
        if p.mean() > target:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def solve_steroid_effect(n=2_000_000, seed=77, target=1.35):
    spec = synth.scenario_spec("steroid")
    rng = np.random.default_rng(seed)
    pop = synth._draw_population(spec, n, rng, light=True)
    eps = rng.normal(size=n) * spec.noise_sd
    p = synth._assignment_probability(spec, pop, eps / spec.noise_sd)
    mu = synth._linear_score(pop.features, spec.outcome_coefs, spec.outcome_intercept)
    y0 = synth.clip_to_osfd(mu + eps)

    def att(tau):
        delta = synth.clip_to_osfd(mu + tau + eps) - y0
        return float(np.sum(p * delta) / np.sum(p))

    lo, hi = 0.5, 3.0
    for _ in range(50):
        mid = 0.5 * (lo + hi)
        if att(mid) > target:
            hi = mid
        else:
            lo = mid
    tau = 0.5 * (lo + hi)
    return tau, att(tau)


def ac_post_exclusion_frac(intercept, n=20_000, seeds=(0, 1, 2)):
    base = synth.scenario_spec("ac")
    spec = synth.ScenarioSpec(**{**base.__dict__, "assignment_intercept": intercept, "n": n})
    fracs = []
    for seed in seeds:
        cohort = synth.generate_cohort(spec, seed=seed)
        tables = RawTables(cohort.patients, cohort.vitals, cohort.med_events, cohort.organ_support, cohort.outcomes)
        res = build_cohort_from_tables(tables, PipelineConfig(analysis="ac"))
        treated = len(res.arm_ids("treated"))
        control = len(res.arm_ids("control"))
        fracs.append(treated / (treated + control))
    return float(np.mean(fracs))


def main():
    for name, target in [("steroid", 190 / 2282), ("fxa", 318 / 2281)]:
        spec, score0, override = assignment_parts(name, n=1_000_000, seed=11)
        a0 = solve_intercept(score0, target, override, spec.ddimer_override_prob)
        print(f"{name}: assignment_intercept = {a0:.4f} (target frac {target:.4f})")

    tau, achieved = solve_steroid_effect()
    print(f"steroid: treatment_effect_latent = {tau:.4f} (clipped ATT {achieved:.4f})")

    # ac target is post-exclusion, so bisect through the event machinery
    lo, hi = -5.0, 2.0
    for _ in range(14):
        mid = 0.5 * (lo + hi)
        frac = ac_post_exclusion_frac(mid)
        if frac > 0.23:
            hi = mid
        else:
            lo = mid
    a0 = 0.5 * (lo + hi)
    print(f"ac: assignment_intercept = {a0:.4f} (post-exclusion frac {ac_post_exclusion_frac(a0):.4f})")


if __name__ == "__main__":
    main()
