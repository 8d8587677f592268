"""Chiller + thermal-storage design proposals: daily simulation and costing.

Storage is tracked thermally in kWh of cooling. Chiller electrical power
comes from the fitted part-load curves. Each policy runs one chiller set per
tariff window (peak / off-peak), with a loading rule per window:

``follow``  chillers track the load
``floor``   chillers run at least ``level`` RT, surplus charges the tank
``cap``     chillers run at most ``level`` RT, the tank covers the rest
``fixed``   chillers run at exactly ``level`` RT

One level per policy is left free and solved so the tank ends the day where
it started.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from .dispatch import (
    GaConfig,
    PlantConfig,
    chiller_power,
    cubic,
    max_efficiency_plr,
    optimize_dispatch_bruteforce,
    optimize_dispatch_ga,
)
from .errors import ConfigError, CyclicityError, InfeasibleError, InputError
from .ingest import LoadSeries, PhysConstants, format_timestamps, minutes_of_day

BALANCE_TOL = 1e-6


@dataclass(frozen=True)
class TariffSchedule:
    peak_rate: float = 0.2967  # $/kWh
    offpeak_rate: float = 0.1843  # $/kWh
    capacity_rate: float = 16.48  # $/kW/month
    peak_start: str = "07:00"
    peak_end: str = "23:00"

    def __post_init__(self):
        if min(self.peak_rate, self.offpeak_rate, self.capacity_rate) <= 0:
            raise ConfigError("tariff rates must be positive")
        if _hhmm(self.peak_start) == _hhmm(self.peak_end):
            raise ConfigError("peak window is empty")

    def is_peak(self, minute_of_day) -> np.ndarray:
        m = np.asarray(minute_of_day)
        a, b = _hhmm(self.peak_start), _hhmm(self.peak_end)
        if a < b:
            return (m >= a) & (m < b)
        return (m >= a) | (m < b)


def _hhmm(s: str) -> int:
    h, m = s.split(":")
    return int(h) * 60 + int(m)


@dataclass(frozen=True)
class CapexRates:
    chiller: float = 654.00  # $/kW
    tes: float = 71.09  # $/kWh

    def __post_init__(self):
        if self.chiller <= 0 or self.tes <= 0:
            raise ConfigError("capital cost rates must be positive")


@dataclass(frozen=True)
class TesConfig:
    capacity_kwh: Optional[float] = None  # None -> sized to the daily swing
    max_charge_kw: Optional[float] = None
    max_discharge_kw: Optional[float] = None
    retention: float = 0.999
    initial_soc_kwh: Optional[float] = None  # None -> lowest SoC reaches zero

    def __post_init__(self):
        if not 0 < self.retention <= 1:
            raise ConfigError("tes.retention must lie in (0, 1]")
        if self.capacity_kwh is not None and self.capacity_kwh < 0:
            raise ConfigError("tes.capacity_kwh must be >= 0")
        if self.initial_soc_kwh is not None and self.capacity_kwh is not None and not (
            0 <= self.initial_soc_kwh <= self.capacity_kwh
        ):
            raise ConfigError("initial SoC must lie within [0, capacity]")


@dataclass(frozen=True)
class Stage:
    chillers: tuple  # chiller ids
    mode: str  # follow | floor | cap | fixed
    level: Optional[float] = None  # RT; None -> free variable

    def __post_init__(self):
        if self.mode not in ("follow", "floor", "cap", "fixed"):
            raise ConfigError(f"unknown stage mode {self.mode!r}")


@dataclass(frozen=True)
class Policy:
    offpeak: Stage
    peak: Stage
    shared_level: bool = False  # one free level drives both windows


@dataclass
class ProposalConfig:
    name: str
    fleet: PlantConfig
    policy: str = "optimal"  # optimal | preset1..preset4 | custom
    tes: TesConfig = field(default_factory=lambda: TesConfig(capacity_kwh=0.0))
    custom: Optional[Policy] = None

    def resolve(self) -> Optional[Policy]:
        """Concrete stages for the chosen preset (``None`` for ``optimal``)."""
        fleet = self.fleet.chillers
        ids = tuple(c.id for c in fleet)
        by_size = sorted(fleet, key=lambda c: -c.capacity)
        largest, smallest = by_size[0], by_size[-1]

        def eff_level(c):
            return max_efficiency_plr(c) * c.capacity

        if self.policy == "optimal":
            return None
        if self.policy == "preset1":
            # one large chiller at best efficiency overnight, the whole fleet by day
            return Policy(Stage((largest.id,), "floor", eff_level(largest)), Stage(ids, "cap"))
        if self.policy == "preset2":
            return Policy(Stage(ids, "fixed"), Stage((largest.id,), "cap", eff_level(largest)))
        if self.policy == "preset3":
            big = tuple(c.id for c in fleet if c.capacity == largest.capacity)
            return Policy(Stage(big, "fixed"), Stage((smallest.id,), "cap", eff_level(smallest)))
        if self.policy == "preset4":
            return Policy(Stage(ids, "fixed"), Stage(ids, "fixed"), shared_level=True)
        if self.policy == "custom":
            if self.custom is None:
                raise ConfigError("custom policy needs stage definitions")
            for st in (self.custom.offpeak, self.custom.peak):
                unknown = set(st.chillers) - set(ids)
                if unknown:
                    raise ConfigError(f"policy references chillers outside the fleet: {sorted(unknown)}")
            return self.custom
        raise ConfigError(f"unknown policy {self.policy!r}")


@dataclass
class EnergyReport:
    total_kwh: float
    peak_kwh: float
    offpeak_kwh: float
    max_demand_kw: float
    tes_charged_kwh: float = 0.0
    tes_discharged_kwh: float = 0.0
    tes_capacity_kwh: float = 0.0
    ledger: Optional[pd.DataFrame] = None

    @classmethod
    def from_totals(cls, peak_kwh, offpeak_kwh, max_demand_kw, charged=0.0, discharged=0.0, capacity=0.0):
        return cls(peak_kwh + offpeak_kwh, peak_kwh, offpeak_kwh, max_demand_kw, charged, discharged, capacity)


# --------------------------------------------------------------------------
# chiller power for a stage


def _subsets(plant: PlantConfig):
    n = len(plant)
    for r in range(1, n + 1):
        for combo in combinations(range(n), r):
            yield [plant.chillers[i] for i in combo]


def stage_min_output(plant: PlantConfig) -> float:
    return min(c.min_plr * c.capacity for c in plant.chillers)


def stage_power(plant: PlantConfig, output_rt) -> np.ndarray:
    """Least electrical kW to deliver ``output_rt`` with evenly loaded chillers.

    Every non-empty subset of the stage is tried at a common PLR
    ``output / subset capacity``; zero output draws nothing.
    """
    q = np.atleast_1d(np.asarray(output_rt, dtype=np.float64))
    best = np.where(q == 0, 0.0, np.inf)
    for sub in _subsets(plant):
        cap = sum(c.capacity for c in sub)
        lo = max(c.min_plr for c in sub)
        x = q / cap
        ok = (q > 0) & (x >= lo - 1e-12) & (x <= 1.0 + 1e-12)
        p = np.zeros_like(q)
        for c in sub:
            p = p + cubic(c.coeffs, x)
        best = np.where(ok & (p < best), p, best)
    if np.any(~np.isfinite(best)):
        bad = q[~np.isfinite(best)][0]
        raise InfeasibleError(f"stage cannot deliver {bad:.3f} RT")
    return best


def _stage_output(stage: Stage, plant: PlantConfig, load, level):
    cap = plant.capacity
    if stage.mode == "follow":
        q = load.copy()
    elif stage.mode == "floor":
        q = np.maximum(load, level)
    elif stage.mode == "cap":
        q = np.minimum(load, level)
    else:
        q = np.full_like(load, level)
    q = np.clip(q, 0.0, cap)
    q_min = stage_min_output(plant)
    return np.where((q > 0) & (q < q_min), q_min, q)


# --------------------------------------------------------------------------
# simulation


def _flows(load, output, kwh_per_rt):
    """Per-slot thermal charge / discharge (kWh) implied by chiller output."""
    diff = (output - load) * kwh_per_rt
    return np.maximum(diff, 0.0), np.maximum(-diff, 0.0)


def simulate_proposal(p: ProposalConfig, loads: LoadSeries, t: TariffSchedule = TariffSchedule(),
                      c: PhysConstants = PhysConstants(), method: str = "oracle", ga: GaConfig = GaConfig()) -> EnergyReport:
    """Run one design over a 24-hour profile on the 30-minute grid."""
    if len(loads) * loads.step_min != 1440:
        raise InputError(f"daily profile must cover 24 h, got {len(loads)} x {loads.step_min} min")
    load = np.maximum(loads.values, 0.0)
    dt = loads.step_min / 60.0
    kwh_per_rt = c.kw_per_rt * dt
    ts = loads.timestamps
    peak = t.is_peak(minutes_of_day(ts))
    fleet = p.fleet
    policy = p.resolve()
    eta = p.tes.retention

    if policy is None:
        output = load.copy()
        power = np.empty(len(load))
        sols = []
        for i, L in enumerate(load):
            if method == "ga":
                sol = optimize_dispatch_ga(fleet, float(L), GaConfig(**{**ga.__dict__, "seed": ga.seed + i}))
            else:
                sol = optimize_dispatch_bruteforce(fleet, float(L))
            if not sol.feasible:
                raise InfeasibleError(f"{p.name}: slot {format_timestamps(ts[i:i+1])[0]} load {L:.1f} RT exceeds the fleet")
            power[i] = sol.total_power
            sols.append(sol)
    else:
        plants = {
            "off": fleet.subset(policy.offpeak.chillers),
            "peak": fleet.subset(policy.peak.chillers),
        }

        def outputs(free):
            lv_off = free if policy.offpeak.level is None else policy.offpeak.level
            lv_pk = free if policy.peak.level is None else policy.peak.level
            q_off = _stage_output(policy.offpeak, plants["off"], load, lv_off)
            q_pk = _stage_output(policy.peak, plants["peak"], load, lv_pk)
            return np.where(peak, q_pk, q_off)

        free_stages = [s for s in (policy.offpeak, policy.peak) if s.level is None and s.mode != "follow"]
        if free_stages:
            hi = max(plants["off"].capacity if policy.offpeak.level is None else 0.0,
                     plants["peak"].capacity if policy.peak.level is None else 0.0)

            def imbalance(free):
                ch, dis = _flows(load, outputs(free), kwh_per_rt)
                return eta * ch.sum() - dis.sum()

            g_lo, g_hi = imbalance(0.0), imbalance(hi)
            if g_lo > 0 or g_hi < 0:
                raise CyclicityError(f"{p.name}: no loading level returns the tank to its initial charge "
                                     f"(imbalance {g_lo:.1f} .. {g_hi:.1f} kWh)")
            lo_x, hi_x = 0.0, hi
            for _ in range(200):
                mid = 0.5 * (lo_x + hi_x)
                if imbalance(mid) < 0:
                    lo_x = mid
                else:
                    hi_x = mid
                if hi_x - lo_x < 1e-10 * max(hi, 1.0):
                    break
            # upper bracket: the tank never gives back more than it stored
            free = hi_x
        else:
            free = 0.0
        output = outputs(free)
        power = np.where(peak, stage_power(plants["peak"], np.where(peak, output, 0.0)),
                         stage_power(plants["off"], np.where(peak, 0.0, output)))
        sols = None

    charge, discharge = _flows(load, output, kwh_per_rt)
    net = eta * charge - discharge
    traj = np.concatenate([[0.0], np.cumsum(net)])
    if p.tes.initial_soc_kwh is None:
        soc0 = -traj.min()
    else:
        soc0 = p.tes.initial_soc_kwh
    soc = soc0 + traj
    capacity = p.tes.capacity_kwh if p.tes.capacity_kwh is not None else float(traj.max() - traj.min())

    label = format_timestamps(ts)
    if policy is not None or capacity > 0:
        swing = max(capacity, 1.0)
        if abs(soc[-1] - soc[0]) > 0.01 * swing:
            raise CyclicityError(f"{p.name}: terminal SoC {soc[-1]:.1f} kWh differs from initial {soc[0]:.1f} kWh")
    low = np.flatnonzero(soc < -BALANCE_TOL)
    high = np.flatnonzero(soc > capacity + BALANCE_TOL)
    if len(low):
        i = max(low[0] - 1, 0)
        raise InfeasibleError(f"{p.name}: tank empties at slot {label[i]}; load cannot be met")
    if len(high):
        raise InfeasibleError(f"{p.name}: tank overflows at slot {label[high[0] - 1]} (capacity {capacity:.1f} kWh)")
    if p.tes.max_charge_kw is not None and np.any(charge / dt > p.tes.max_charge_kw + BALANCE_TOL):
        raise InfeasibleError(f"{p.name}: charge rate exceeded at slot {label[int(np.argmax(charge))]}")
    if p.tes.max_discharge_kw is not None and np.any(discharge / dt > p.tes.max_discharge_kw + BALANCE_TOL):
        raise InfeasibleError(f"{p.name}: discharge rate exceeded at slot {label[int(np.argmax(discharge))]}")

    energy = power * dt
    ledger = pd.DataFrame({
        "time": label,
        "load_rt": load,
        "chiller_rt": output,
        "charge_kwh": charge,
        "discharge_kwh": discharge,
        "soc_kwh": soc[1:],
        "power_kw": power,
        "peak": peak.astype(int),
    })
    if sols is not None:
        for j, ch in enumerate(fleet.chillers):
            ledger[f"plr_{ch.id}"] = [s.plr[j] for s in sols]
    return EnergyReport(
        total_kwh=float(energy.sum()),
        peak_kwh=float(energy[peak].sum()),
        offpeak_kwh=float(energy[~peak].sum()),
        max_demand_kw=float(power.max()),
        tes_charged_kwh=float(charge.sum()),
        tes_discharged_kwh=float(discharge.sum()),
        tes_capacity_kwh=float(capacity),
        ledger=ledger,
    )


def check_balance(report: EnergyReport, c: PhysConstants = PhysConstants(), dt: float = 0.5) -> float:
    """Largest per-slot thermal imbalance (kWh) in a simulation ledger."""
    lg = report.ledger
    k = c.kw_per_rt * dt
    resid = lg["chiller_rt"] * k + lg["discharge_kwh"] - lg["charge_kwh"] - lg["load_rt"] * k
    return float(np.abs(resid).max())


# --------------------------------------------------------------------------
# costs


@dataclass
class CostReport:
    name: str
    chiller_capital: float
    tes_capital: float
    total_capital: float
    daily_peak_tariff: float
    daily_offpeak_tariff: float
    daily_total_tariff: float
    monthly_capacity_charge: float
    yearly_operating: float
    ten_year_total: float
    capital_savings: Optional[float] = None  # fractions vs baseline
    operating_savings: Optional[float] = None
    ten_year_savings: Optional[float] = None
    energy: Optional[EnergyReport] = None
    fleet_kw: float = 0.0
    tes_kwh: float = 0.0


def _saving(base, this):
    return None if base == 0 else (base - this) / base


def cost_analysis(e: EnergyReport, fleet_kw: float, tes: Optional[TesConfig] = None, t: TariffSchedule = TariffSchedule(),
                  c: CapexRates = CapexRates(), baseline: Optional[CostReport] = None, name: str = "") -> CostReport:
    """Capital, tariff and 10-year totals for one design."""
    tes_kwh = e.tes_capacity_kwh if tes is None or tes.capacity_kwh is None else tes.capacity_kwh
    chiller_capital = fleet_kw * c.chiller
    tes_capital = tes_kwh * c.tes
    total_capital = chiller_capital + tes_capital
    d_peak = e.peak_kwh * t.peak_rate
    d_off = e.offpeak_kwh * t.offpeak_rate
    daily = d_peak + d_off
    monthly = e.max_demand_kw * t.capacity_rate
    yearly = 365.0 * daily + 12.0 * monthly
    ten = total_capital + 10.0 * yearly
    rep = CostReport(name, chiller_capital, tes_capital, total_capital, d_peak, d_off, daily, monthly, yearly, ten,
                     energy=e, fleet_kw=fleet_kw, tes_kwh=tes_kwh)
    if baseline is not None:
        rep.capital_savings = _saving(baseline.total_capital, total_capital)
        rep.operating_savings = _saving(baseline.yearly_operating, yearly)
        rep.ten_year_savings = _saving(baseline.ten_year_total, ten)
    return rep


@dataclass
class Comparison:
    table: pd.DataFrame
    ranking: list  # names, best 10-year total first


_ROWS = [
    ("Total Power Consumption", "kWh", lambda r: r.energy.total_kwh if r.energy else None),
    ("Peak Power Consumption", "kWh", lambda r: r.energy.peak_kwh if r.energy else None),
    ("Off-peak Power Consumption", "kWh", lambda r: r.energy.offpeak_kwh if r.energy else None),
    ("Maximum Power Demand", "kW", lambda r: r.energy.max_demand_kw if r.energy else None),
    ("TES Charging", "kWh", lambda r: r.energy.tes_charged_kwh if r.energy else None),
    ("TES Discharging", "kWh", lambda r: r.energy.tes_discharged_kwh if r.energy else None),
    ("TES Capacity", "kWh", lambda r: r.tes_kwh),
    ("Chiller Capacity", "kW", lambda r: r.fleet_kw),
    ("Chiller Capital Cost", "$", lambda r: r.chiller_capital),
    ("TES Capital Cost", "$", lambda r: r.tes_capital),
    ("Total Capital Cost", "$", lambda r: r.total_capital),
    ("Percentage Savings in Capital Cost", "%", lambda r: r.capital_savings),
    ("Electricity Tariff Cost in Peak Hours", "$/day", lambda r: r.daily_peak_tariff),
    ("Electricity Tariff Cost in Off-peak Hours", "$/day", lambda r: r.daily_offpeak_tariff),
    ("Total Electricity Tariff Cost", "$/day", lambda r: r.daily_total_tariff),
    ("Contract Capacity Cost per Month", "$/month", lambda r: r.monthly_capacity_charge),
    ("Total Yearly Operating Cost", "$", lambda r: r.yearly_operating),
    ("Percentage Savings in Operating Cost", "%", lambda r: r.operating_savings),
    ("10 Years Costing", "$", lambda r: r.ten_year_total),
    ("Percentage Savings over 10 years", "%", lambda r: r.ten_year_savings),
]


def compare_proposals(reports: Sequence[CostReport], t: TariffSchedule = TariffSchedule(), c: CapexRates = CapexRates()) -> Comparison:
    """Side-by-side table against the first (baseline) report, ranked by 10-year total.

    Savings are recomputed against ``reports[0]`` so inputs need not carry them.
    """
    if len(reports) < 2:
        raise InputError("comparison needs a baseline and at least one proposal")
    base = reports[0]
    rows = []
    names = [r.name or f"design{i}" for i, r in enumerate(reports)]
    filled = []
    for i, r in enumerate(reports):
        r2 = CostReport(**{**r.__dict__})
        if i > 0:
            r2.capital_savings = _saving(base.total_capital, r.total_capital)
            r2.operating_savings = _saving(base.yearly_operating, r.yearly_operating)
            r2.ten_year_savings = _saving(base.ten_year_total, r.ten_year_total)
        filled.append(r2)
    for label, unit, get in _ROWS:
        vals = []
        for r in filled:
            v = get(r)
            if unit == "%" and v is not None:
                v = 100.0 * v
            vals.append(np.nan if v is None else v)
        rows.append([label, unit] + vals)
    table = pd.DataFrame(rows, columns=["item", "unit"] + names)
    order = sorted(range(len(filled)), key=lambda i: (filled[i].ten_year_total, i))
    return Comparison(table, [names[i] for i in order])
