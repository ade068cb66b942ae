import pytest
from hypothesis import given, settings, strategies as st

from cohortfx.cohort import (
    ArmAssignment,
    MedAdminEvent,
    OrganSupportRecord,
    apply_ddimer_exclusion,
    assign_ac_arm,
    assign_fxa_naive_arm,
    assign_steroid_arm,
    build_cohort,
    classify_ac_dose,
    osfd21,
)


def ev(drug, dose, route, t, pid="P1"):
    return MedAdminEvent(patient_id=pid, drug=drug, dose=dose, route=route, timestamp=t)


def osfd_oracle(support_days, died):
    """Day-counting reference: enumerate the 21-day calendar."""
    if died:
        return -1
    return sum(1 for day in range(21) if day not in support_days)


class TestOsfd21:
    def test_death_is_minus_one_regardless_of_support(self):
        rec = OrganSupportRecord("P1", frozenset({0, 1, 2}), died=True)
        assert osfd21(rec) == -1

    def test_no_support_full_21(self):
        assert osfd21(OrganSupportRecord("P1", frozenset(), died=False)) == 21

    def test_five_ventilation_days(self):
        rec = OrganSupportRecord("P1", frozenset({0, 1, 2, 3, 4}), died=False)
        assert osfd21(rec) == osfd_oracle({0, 1, 2, 3, 4}, False) == 16

    def test_support_beyond_day_20_ignored(self):
        rec = OrganSupportRecord("P1", frozenset({21, 25}), died=False, observed_days=30)
        assert osfd21(rec) == 21

    @given(
        days=st.sets(st.integers(min_value=0, max_value=40), max_size=35),
        died=st.booleans(),
    )
    @settings(max_examples=200, deadline=None)
    def test_matches_day_count_oracle_and_range(self, days, died):
        rec = OrganSupportRecord("P1", frozenset(days), died=died, observed_days=60)
        got = osfd21(rec)
        assert got == osfd_oracle(days, died)
        assert -1 <= got <= 21
        assert (got == 21) == (not died and not any(d < 21 for d in days))

    def test_censored_record_rejected(self):
        with pytest.raises(ValueError):
            OrganSupportRecord("P1", frozenset(), died=False, observed_days=14)


class TestClassifyAcDose:
    def test_enoxaparin_60mg_boundary_is_therapeutic(self):
        assert classify_ac_dose(ev("enoxaparin", 60.0, "subcutaneous", 5.0)) == "therapeutic"

    def test_enoxaparin_under_60_prophylactic(self):
        assert classify_ac_dose(ev("enoxaparin", 40.0, "subcutaneous", 5.0)) == "prophylactic"

    def test_subcut_heparin_daily_total_rule(self):
        event = ev("heparin", 5000.0, "subcutaneous", 5.0)
        assert classify_ac_dose(event, subcut_heparin_units_24h=10_000.0) == "prophylactic"
        assert classify_ac_dose(event, subcut_heparin_units_24h=15_000.0) == "prophylactic"
        assert classify_ac_dose(event, subcut_heparin_units_24h=15_001.0) == "therapeutic"

    def test_iv_heparin_any_dose_therapeutic(self):
        assert classify_ac_dose(ev("heparin", 100.0, "intravenous", 5.0)) == "therapeutic"

    @pytest.mark.parametrize("drug", ["rivaroxaban", "warfarin", "dabigatran"])
    def test_oral_agents_always_therapeutic(self, drug):
        assert classify_ac_dose(ev(drug, 2.5, "oral", 5.0)) == "therapeutic"

    def test_non_ac_drug_is_other(self):
        assert classify_ac_dose(ev("dexamethasone", 6.0, "intravenous", 5.0)) == "other"

    def test_oral_heparin_rejected(self):
        with pytest.raises(ValueError, match="route"):
            classify_ac_dose(ev("heparin", 5000.0, "oral", 5.0))

    def test_unknown_drug_rejected_at_construction(self):
        with pytest.raises(ValueError):
            ev("aspirin", 81.0, "oral", 5.0)


class TestAssignAcArm:
    def test_all_therapeutic_treated(self):
        events = [ev("heparin", 1000.0, "intravenous", 5.0), ev("heparin", 1000.0, "intravenous", 40.0)]
        assert assign_ac_arm(events).arm == "treated"

    def test_mixed_levels_excluded(self):
        events = [ev("heparin", 5000.0, "subcutaneous", 8.0), ev("heparin", 1000.0, "intravenous", 50.0)]
        out = assign_ac_arm(events)
        assert out.arm == "excluded"
        assert out.reason == "mixed-dose-window"

    def test_first_dose_after_window_excluded(self):
        out = assign_ac_arm([ev("heparin", 1000.0, "intravenous", 80.0)], window_hours=72.0)
        assert (out.arm, out.reason) == ("excluded", "no-ac-in-window")

    def test_all_prophylactic_control(self):
        events = [ev("heparin", 5000.0, "subcutaneous", t) for t in (2.0, 10.0, 18.0)]
        assert assign_ac_arm(events).arm == "control"

    def test_high_total_subcut_heparin_counts_therapeutic(self):
        events = [ev("heparin", 7500.0, "subcutaneous", t) for t in (2.0, 10.0, 18.0)]
        assert assign_ac_arm(events).arm == "treated"

    def test_steroid_events_do_not_count(self):
        events = [ev("dexamethasone", 6.0, "intravenous", 5.0)]
        assert assign_ac_arm(events).reason == "no-ac-in-window"

    @given(st.data())
    @settings(max_examples=120, deadline=None)
    def test_mixed_exclusion_monotone_in_window(self, data):
        times = data.draw(
            st.lists(st.floats(min_value=0.0, max_value=120.0), min_size=1, max_size=6), label="times"
        )
        kinds = data.draw(
            st.lists(st.sampled_from(["iv", "subq", "enox_hi", "enox_lo"]), min_size=len(times), max_size=len(times)),
            label="kinds",
        )
        events = []
        for t, kind in zip(times, kinds):
            if kind == "iv":
                events.append(ev("heparin", 1000.0, "intravenous", t))
            elif kind == "subq":
                events.append(ev("heparin", 5000.0, "subcutaneous", t))
            elif kind == "enox_hi":
                events.append(ev("enoxaparin", 80.0, "subcutaneous", t))
            else:
                events.append(ev("enoxaparin", 40.0, "subcutaneous", t))
        windows = (24.0, 48.0, 72.0, 96.0)
        verdicts = [assign_ac_arm(events, w) for w in windows]
        for earlier, later in zip(verdicts, verdicts[1:]):
            if earlier.reason == "mixed-dose-window":
                assert later.reason == "mixed-dose-window"


class TestDdimerExclusion:
    def assignments(self):
        return [ArmAssignment("P1", "treated"), ArmAssignment("P2", "control"), ArmAssignment("P3", "treated")]

    def test_high_value_excluded(self):
        out = apply_ddimer_exclusion(self.assignments(), {"P1": 3500.0, "P2": 100.0, "P3": 200.0})
        assert out[0].arm == "excluded" and out[0].reason == "ddimer-high"

    def test_boundary_below_cutoff_retained(self):
        out = apply_ddimer_exclusion(self.assignments(), {"P1": 2999.0, "P2": 100.0, "P3": 200.0})
        assert out[0].arm == "treated"

    def test_missing_value_excluded_with_reason(self):
        out = apply_ddimer_exclusion(self.assignments(), {"P2": 100.0, "P3": float("nan")})
        assert (out[0].arm, out[0].reason) == ("excluded", "ddimer-missing")
        assert (out[2].arm, out[2].reason) == ("excluded", "ddimer-missing")

    def test_existing_exclusion_reason_preserved(self):
        prior = [ArmAssignment("P1", "excluded", "mixed-dose-window")]
        out = apply_ddimer_exclusion(prior, {"P1": 9000.0})
        assert out[0].reason == "mixed-dose-window"


class TestSteroidAndFxaArms:
    def test_dexamethasone_in_window_treated(self):
        assert assign_steroid_arm([ev("dexamethasone", 6.0, "intravenous", 10.0)]).arm == "treated"

    def test_late_prednisone_is_control(self):
        assert assign_steroid_arm([ev("prednisone", 40.0, "oral", 100.0)]).arm == "control"

    def test_no_events_control(self):
        assert assign_steroid_arm([]).arm == "control"

    def test_fxa_any_time_treated(self):
        assert assign_fxa_naive_arm([ev("apixaban", 5.0, "oral", 300.0)]).arm == "treated"

    def test_fxa_no_events_control(self):
        assert assign_fxa_naive_arm([]).arm == "control"

    def test_rivaroxaban_counts_in_both_analyses(self):
        events = [ev("rivaroxaban", 15.0, "oral", 10.0)]
        assert assign_fxa_naive_arm(events).arm == "treated"
        assert assign_ac_arm(events).arm == "treated"


class TestBuildCohort:
    def records(self):
        return {
            "P1": OrganSupportRecord("P1", frozenset(), died=False),
            "P2": OrganSupportRecord("P2", frozenset({0, 1}), died=False),
            "P3": OrganSupportRecord("P3", frozenset({0}), died=True),
        }

    def test_partition_exhaustive_and_exclusive(self):
        events = {
            "P1": [ev("heparin", 1000.0, "intravenous", 4.0, "P1")],
            "P2": [ev("heparin", 5000.0, "subcutaneous", 4.0, "P2")],
        }
        res = build_cohort("ac", events, self.records(), ddimer_values={"P1": 500.0, "P2": 700.0, "P3": 100.0})
        assert set(res.assignments) == {"P1", "P2", "P3"}
        for a in res.assignments.values():
            assert a.arm in ("treated", "control", "excluded")
        assert res.assignments["P3"].reason == "no-ac-in-window"
        assert res.outcomes == {"P1": 21, "P2": 19, "P3": -1}

    def test_ac_requires_ddimer(self):
        with pytest.raises(ValueError):
            build_cohort("ac", {}, self.records())

    def test_steroid_missing_events_means_control(self):
        res = build_cohort("steroid", {}, self.records())
        assert all(a.arm == "control" for a in res.assignments.values())

    def test_unknown_analysis_rejected(self):
        with pytest.raises(ValueError):
            build_cohort("iptw", {}, self.records())
