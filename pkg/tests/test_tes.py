import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from chillerkit.dispatch import ChillerSpec, PlantConfig, schedule_dispatch
from chillerkit.errors import ConfigError, CyclicityError, InfeasibleError, InputError
from chillerkit.tes import (
    CapexRates,
    EnergyReport,
    Policy,
    ProposalConfig,
    Stage,
    TariffSchedule,
    TesConfig,
    check_balance,
    compare_proposals,
    cost_analysis,
    simulate_proposal,
    stage_power,
)
from conftest import day_series
from reference_data import DESIGNS, REPORTED


def profile(night=500.0, shoulder=1200.0, peak=2150.0):
    """Night until 07:00 and after 23:00, shoulders 07:00-10:00 and 19:00-23:00."""
    v = np.full(48, night)
    v[14:20] = shoulder
    v[20:38] = peak
    v[38:46] = shoulder
    return day_series(v)


def sized(fleet, policy):
    return ProposalConfig(policy, fleet, policy, TesConfig())


def reported_cost(name, baseline=None):
    d = DESIGNS[name]
    e = EnergyReport.from_totals(d["peak"], d["offpeak"], d["demand"])
    return cost_analysis(e, d["fleet_kw"], TesConfig(capacity_kwh=d["tes_kwh"]), baseline=baseline, name=name)


# ---------------------------------------------------------------- tariff / config


def test_peak_window():
    t = TariffSchedule()
    assert t.is_peak([419, 420, 1379, 1380]).tolist() == [False, True, True, False]
    wrap = TariffSchedule(peak_start="22:00", peak_end="06:00")
    assert wrap.is_peak([1320, 0, 359, 360]).tolist() == [True, True, True, False]


def test_config_errors(plant):
    with pytest.raises(ConfigError):
        TariffSchedule(peak_rate=0)
    with pytest.raises(ConfigError):
        TariffSchedule(peak_start="07:00", peak_end="07:00")
    with pytest.raises(ConfigError):
        CapexRates(tes=0)
    with pytest.raises(ConfigError):
        TesConfig(retention=0)
    with pytest.raises(ConfigError):
        TesConfig(capacity_kwh=10, initial_soc_kwh=20)
    with pytest.raises(ConfigError):
        Stage(("CH1",), "boost")
    bad = Policy(Stage(("CH9",), "fixed"), Stage(("CH1",), "cap"))
    with pytest.raises(ConfigError):
        ProposalConfig("x", plant.subset(["CH1"]), "custom", custom=bad).resolve()
    with pytest.raises(ConfigError):
        ProposalConfig("x", plant, "preset9").resolve()


def test_stage_power_uses_best_subset(plant):
    sub = plant.subset(["CH1", "CH2"])
    p = stage_power(sub, [0.0, 500.0, 1500.0])
    assert p[0] == 0.0
    assert p[1] == pytest.approx(stage_power(plant.subset(["CH1"]), 500.0)[0])
    with pytest.raises(InfeasibleError):
        stage_power(sub, 2500.0)


# ---------------------------------------------------------------- simulation examples


def test_no_storage_optimal_matches_dispatch_plan(plant):
    loads = profile()
    p = ProposalConfig("plain", plant)
    e = simulate_proposal(p, loads)
    plan = schedule_dispatch(plant, loads, method="oracle")
    assert e.tes_charged_kwh == 0 and e.tes_discharged_kwh == 0
    assert e.total_kwh == pytest.approx(plan.energy_kwh, rel=1e-12)
    assert e.max_demand_kw == pytest.approx(plan.max_demand_kw, rel=1e-12)


def test_flat_load_preset4(plant):
    p = sized(plant.subset(["CH1", "CH4"]), "preset4")
    e = simulate_proposal(p, day_series(np.full(48, 900.0)))
    power = e.ledger["power_kw"].to_numpy()
    assert np.allclose(power, power[0], rtol=1e-9)
    assert e.max_demand_kw == pytest.approx(power[0], rel=1e-12)
    assert e.tes_charged_kwh == pytest.approx(0.0, abs=1e-3)
    assert e.tes_discharged_kwh == pytest.approx(0.0, abs=1e-3)


def test_preset1_charges_offpeak_and_discharges_in_peak():
    # the night/day example scaled to a fleet whose single-chiller floor covers the night
    big = [ChillerSpec(f"B{i}", 2000.0, (), (125.2, 1039.7, -825.8, 622.9)) for i in (1, 2)]
    fleet = PlantConfig(big)
    v = np.full(48, 1000.0)
    v[14:46] = 2300.0
    e = simulate_proposal(sized(fleet, "preset1"), day_series(v))
    lg = e.ledger
    assert lg.loc[lg.peak == 1, "charge_kwh"].max() == 0
    assert lg.loc[lg.peak == 0, "discharge_kwh"].max() == 0
    assert e.tes_charged_kwh > 0 and e.tes_discharged_kwh > 0


@pytest.mark.parametrize(
    "ids, policy",
    [(["CH1", "CH2"], "preset1"), (["CH1", "CH2", "CH4"], "preset2"), (["CH1", "CH4"], "preset4")],
)
def test_presets_balance_and_bounds(plant, ids, policy):
    e = simulate_proposal(sized(plant.subset(ids), policy), profile())
    assert check_balance(e) < 1e-6
    soc = e.ledger["soc_kwh"].to_numpy()
    assert soc.min() >= -1e-6 and soc.max() <= e.tes_capacity_kwh + 1e-6
    assert abs(soc[-1] - (soc[0] - e.ledger["charge_kwh"][0] * 0.999 + e.ledger["discharge_kwh"][0])) <= 0.01 * e.tes_capacity_kwh
    assert e.tes_discharged_kwh <= 0.999 * e.tes_charged_kwh + 1e-6
    assert e.total_kwh == pytest.approx(e.peak_kwh + e.offpeak_kwh, rel=1e-12)


def test_storage_lowers_peak_energy(plant):
    base = simulate_proposal(ProposalConfig("b", plant), profile())
    p4 = simulate_proposal(sized(plant.subset(["CH1", "CH4"]), "preset4"), profile())
    assert p4.max_demand_kw < base.max_demand_kw
    assert p4.peak_kwh < base.peak_kwh


def test_errors(plant):
    with pytest.raises(InputError):
        simulate_proposal(ProposalConfig("x", plant), day_series(np.full(10, 100.0)))
    with pytest.raises(InfeasibleError):
        simulate_proposal(ProposalConfig("x", plant.subset(["CH4"])), profile())
    with pytest.raises(CyclicityError):
        simulate_proposal(sized(plant.subset(["CH1", "CH2"]), "preset1"), profile(night=2000, shoulder=2000, peak=2000))
    small = ProposalConfig("x", plant.subset(["CH1", "CH4"]), "preset4", TesConfig(capacity_kwh=100.0))
    with pytest.raises(InfeasibleError, match="slot"):
        simulate_proposal(small, profile())
    capped = ProposalConfig("x", plant.subset(["CH1", "CH4"]), "preset4", TesConfig(max_discharge_kw=10.0))
    with pytest.raises(InfeasibleError, match="rate"):
        simulate_proposal(capped, profile())


@given(
    st.floats(200, 800), st.floats(800, 1300), st.floats(1300, 1450),
    st.sampled_from([(["CH1", "CH4"], "preset4"), (["CH1", "CH2"], "preset1"), (["CH1", "CH2", "CH4"], "preset2")]),
)
def test_balance_property(plant, night, shoulder, peak, case):
    ids, policy = case
    try:
        e = simulate_proposal(sized(plant.subset(ids), policy), profile(night, shoulder, peak))
    except (CyclicityError, InfeasibleError):
        assume(False)
    assert check_balance(e) < 1e-6
    soc = e.ledger["soc_kwh"].to_numpy()
    assert soc.min() >= -1e-6 and soc.max() <= e.tes_capacity_kwh + 1e-6


# ---------------------------------------------------------------- costing


def test_reference_baseline_costs():
    b = reported_cost("Baseline")
    assert b.daily_peak_tariff == pytest.approx(3944.8, rel=1e-3)
    assert b.daily_offpeak_tariff == pytest.approx(216.5, rel=1e-3)
    assert b.daily_total_tariff == pytest.approx(4161.4, rel=1e-3)
    assert b.chiller_capital == pytest.approx(8050413.0, abs=0.005)
    assert b.ten_year_total == pytest.approx(25407720.09, rel=1e-4)


@pytest.mark.parametrize("name", list(DESIGNS))
def test_reference_designs_costs(name):
    r = reported_cost(name)
    ref = REPORTED[name]
    assert r.total_capital == pytest.approx(ref["capital"], rel=1e-3)
    assert r.daily_total_tariff == pytest.approx(ref["daily"], rel=1e-3)
    assert r.monthly_capacity_charge == pytest.approx(ref["monthly"], rel=1e-3)
    assert r.ten_year_total == pytest.approx(ref["ten"], rel=1e-3)


def test_reference_comparison_ranking():
    reports = [reported_cost(n) for n in DESIGNS]
    cmp_ = compare_proposals(reports)
    assert cmp_.ranking[0] == "Proposal 4"
    row = cmp_.table.set_index("item").loc["Percentage Savings over 10 years"]
    assert row["Proposal 4"] == pytest.approx(17.0, abs=0.5)
    assert np.isnan(row["Baseline"])
    assert reports[1].total_capital == pytest.approx(6037492.1, rel=1e-3)


def test_identical_reports_save_nothing():
    a, b = reported_cost("Proposal 2"), reported_cost("Proposal 2")
    t = compare_proposals([a, b]).table.set_index("item")
    for item in ("Percentage Savings in Capital Cost", "Percentage Savings in Operating Cost", "Percentage Savings over 10 years"):
        assert t.loc[item].iloc[-1] == 0.0
    with pytest.raises(InputError):
        compare_proposals([a])


@given(st.floats(0, 1e5), st.floats(0, 1e5), st.floats(0, 5e3), st.floats(0, 2e4), st.floats(0, 1e5))
def test_cost_identities(peak, off, demand, fleet_kw, tes_kwh):
    t, c = TariffSchedule(), CapexRates()
    r = cost_analysis(EnergyReport.from_totals(peak, off, demand), fleet_kw, TesConfig(capacity_kwh=tes_kwh))
    assert r.chiller_capital == pytest.approx(fleet_kw * c.chiller, abs=0.005)
    assert r.tes_capital == pytest.approx(tes_kwh * c.tes, abs=0.005)
    daily = peak * t.peak_rate + off * t.offpeak_rate
    yearly = 365 * daily + 12 * demand * t.capacity_rate
    assert r.yearly_operating == pytest.approx(yearly, abs=0.005)
    assert r.ten_year_total == pytest.approx(fleet_kw * c.chiller + tes_kwh * c.tes + 10 * yearly, abs=0.05)


@given(st.floats(0, 1e5), st.floats(0, 1e5), st.floats(0.01, 1.0), st.floats(0, 1.0))
def test_peak_rate_monotone(peak, off, rate, bump):
    e = EnergyReport.from_totals(peak, off, 100.0)
    lo = cost_analysis(e, 0.0, t=TariffSchedule(peak_rate=rate))
    hi = cost_analysis(e, 0.0, t=TariffSchedule(peak_rate=rate + bump))
    assert hi.daily_total_tariff >= lo.daily_total_tariff


@given(st.floats(1, 5000), st.floats(0.01, 0.99))
def test_capacity_charge_linear(base_demand, frac):
    base = cost_analysis(EnergyReport.from_totals(0, 0, base_demand), 0.0)
    prop = cost_analysis(EnergyReport.from_totals(0, 0, base_demand * frac), 0.0)
    assert prop.monthly_capacity_charge < base.monthly_capacity_charge


def test_sized_tank_feeds_capital(plant):
    p = sized(plant.subset(["CH1", "CH4"]), "preset4")
    e = simulate_proposal(p, profile())
    r = cost_analysis(e, 1000.0, p.tes)
    assert r.tes_kwh == e.tes_capacity_kwh > 0
    assert r.tes_capital == pytest.approx(e.tes_capacity_kwh * 71.09, rel=1e-12)
