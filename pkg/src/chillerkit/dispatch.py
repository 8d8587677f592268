"""Chiller part-load power curves and minimum-power loading.

Two solvers share one problem statement: minimise total chiller power such
that the chillers cover the load, with each chiller either off or between
its minimum part-load ratio and full load. :func:`optimize_dispatch_ga` is
the genetic algorithm; :func:`optimize_dispatch_bruteforce` enumerates a PLR
grid and serves as its oracle.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from itertools import combinations_with_replacement
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from . import kernels
from .errors import ConfigError, InputError
from .ingest import LoadSeries, format_timestamps

CONSISTENCY_KW = 1.5


def fit_power_curve(rows):
    """Least-squares cubic ``P = a + b x + c x^2 + d x^3`` through table rows.

    ``rows`` holds ``(plr, efficiency, power)`` triples. Returns the
    coefficient tuple and the per-row residuals ``fitted - power`` (kW).
    """
    arr = np.asarray(rows, dtype=np.float64)
    if arr.ndim != 2 or len(arr) < 4:
        raise InputError("a cubic fit needs at least 4 part-load rows")
    x, p = arr[:, 0], arr[:, -1]
    V = np.vander(x, 4, increasing=True)
    coeffs, _, rank, _ = np.linalg.lstsq(V, p, rcond=None)
    if rank < 4:
        raise InputError("part-load table is rank deficient (repeated PLR values?)")
    return tuple(float(c) for c in coeffs), V @ coeffs - p


@dataclass(frozen=True)
class ChillerSpec:
    id: str
    capacity: float  # RT
    table: tuple  # ((plr, kW/RT, kW), ...)
    coeffs: tuple  # (a, b, c, d) in kW
    min_plr: float = 0.3

    @classmethod
    def from_table(cls, id: str, capacity: float, rows, min_plr: float = 0.3) -> "ChillerSpec":
        coeffs, _ = fit_power_curve(rows)
        spec = cls(id, float(capacity), tuple(tuple(float(v) for v in r) for r in rows), coeffs, float(min_plr))
        spec.validate()
        return spec

    @property
    def model_key(self):
        return (self.capacity, self.coeffs, self.min_plr)

    def validate(self):
        if self.capacity <= 0 or not (0 < self.min_plr <= 1):
            raise ConfigError(f"{self.id}: capacity must be > 0 and min_plr in (0, 1]")
        if self.table:
            t = np.asarray(self.table)
            plr = t[:, 0]
            if np.any(np.diff(plr) <= 0) or plr[0] < 0.2 - 1e-12 or plr[-1] > 1.0 + 1e-12:
                raise ConfigError(f"{self.id}: table PLRs must increase strictly within [0.2, 1]")
            gap = np.abs(t[:, 2] - t[:, 1] * plr * self.capacity)
            if np.any(gap > CONSISTENCY_KW):
                raise ConfigError(f"{self.id}: power column disagrees with efficiency x load by {gap.max():.2f} kW")
        grid = np.linspace(self.min_plr, 1.0, 701)
        if np.any(cubic(self.coeffs, grid) <= 0):
            raise ConfigError(f"{self.id}: fitted power curve is not positive on [{self.min_plr}, 1]")


def cubic(coeffs, x):
    a, b, c, d = coeffs
    return a + x * (b + x * (c + x * d))


def chiller_power(spec: ChillerSpec, plr, penalty_mode: bool = False):
    """Electrical kW at a part-load ratio; an off chiller (plr = 0) draws 0.

    Outside penalty mode, ratios other than 0 or ``[min_plr, 1]`` raise.
    """
    x = np.asarray(plr, dtype=np.float64)
    if np.any(x < 0):
        raise InputError("negative part-load ratio")
    if not penalty_mode:
        bad = (x != 0) & ((x < spec.min_plr - 1e-12) | (x > 1 + 1e-12))
        if np.any(bad):
            raise InputError(f"{spec.id}: PLR must be 0 or within [{spec.min_plr}, 1]")
    p = np.where(x == 0, 0.0, cubic(spec.coeffs, x))
    return float(p) if p.ndim == 0 else p


def max_efficiency_plr(spec: ChillerSpec) -> float:
    """PLR in ``[min_plr, 1]`` minimising kW per RT on the fitted curve.

    The stationary points of ``P(x)/x`` solve ``2d x^3 + c x^2 - a = 0``.
    """
    a, b, c, d = spec.coeffs
    cands = [spec.min_plr, 1.0]
    for r in np.roots([2 * d, c, 0.0, -a]):
        if abs(r.imag) < 1e-12 and spec.min_plr <= r.real <= 1.0:
            cands.append(float(r.real))
    return min(cands, key=lambda x: cubic(spec.coeffs, x) / x)


@dataclass
class PlantConfig:
    chillers: list

    def __post_init__(self):
        if not self.chillers:
            raise ConfigError("a plant needs at least one chiller")

    @property
    def capacity(self) -> float:
        return float(sum(c.capacity for c in self.chillers))

    def __len__(self):
        return len(self.chillers)

    def subset(self, ids: Sequence[str]) -> "PlantConfig":
        by_id = {c.id: c for c in self.chillers}
        missing = [i for i in ids if i not in by_id]
        if missing:
            raise ConfigError(f"unknown chiller id(s) {missing}")
        return PlantConfig([by_id[i] for i in ids])


def plant_from_dict(d: dict) -> PlantConfig:
    try:
        min_plr = float(d.get("min_plr", 0.3))
        models = d.get("models", {})
        chillers = []
        for entry in d["chillers"]:
            m = models[entry["model"]] if "model" in entry else entry
            chillers.append(ChillerSpec.from_table(entry["id"], m["capacity_rt"], m["part_load"], entry.get("min_plr", min_plr)))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed plant description: missing or invalid {exc}") from None
    return PlantConfig(chillers)


def load_plant(path=None) -> PlantConfig:
    """Plant description file; the packaged reference plant when ``path`` is None."""
    if path is None:
        text = resources.files("chillerkit").joinpath("data/plant_default.json").read_text()
    else:
        try:
            with open(path) as fh:
                text = fh.read()
        except FileNotFoundError:
            raise InputError(f"no such file: {path}") from None
    try:
        return plant_from_dict(json.loads(text))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed plant description: {exc}") from None


def default_plant() -> PlantConfig:
    return load_plant(None)


@dataclass
class DispatchSolution:
    plr: np.ndarray
    total_power: float  # kW
    supplied_load: float  # RT
    feasible: bool
    method: str = ""


def _finish(plant: PlantConfig, plr, feasible, method) -> DispatchSolution:
    plr = np.asarray(plr, dtype=np.float64)
    total = 0.0
    for spec, x in zip(plant.chillers, plr):
        total += chiller_power(spec, x, penalty_mode=not feasible)
    supplied = float(sum(x * c.capacity for x, c in zip(plr, plant.chillers)))
    return DispatchSolution(plr, float(total), supplied, bool(feasible), method)


def validate_solution(plant: PlantConfig, load: float, sol: DispatchSolution, tol: float = 1e-9) -> list:
    """Independent check of both loading constraints; returns violations."""
    problems = []
    for spec, x in zip(plant.chillers, sol.plr):
        if not (x == 0 or spec.min_plr - 1e-12 <= x <= 1.0 + 1e-12):
            problems.append(f"{spec.id}: PLR {x} outside {{0}} U [{spec.min_plr}, 1]")
    supplied = sum(float(x) * c.capacity for x, c in zip(sol.plr, plant.chillers))
    if supplied < load - tol:
        problems.append(f"supplied {supplied:.6f} RT < load {load:.6f} RT")
    power = sum(chiller_power(c, x, penalty_mode=True) for c, x in zip(plant.chillers, sol.plr))
    if abs(power - sol.total_power) > 1e-9 * max(1.0, power):
        problems.append(f"total power {sol.total_power} != recomputed {power}")
    return problems


# --------------------------------------------------------------------------
# brute force


def plr_levels(min_plr: float, step: float) -> np.ndarray:
    n = int(round((1.0 - min_plr) / step)) + 1
    on = np.round(min_plr + step * np.arange(n), 10)
    on = on[on <= 1.0 + 1e-12]
    return np.concatenate([[0.0], on])


@lru_cache(maxsize=64)
def _group_table(capacity, coeffs, min_plr, step, size):
    levels = plr_levels(min_plr, step)
    lvl_power = np.where(levels == 0, 0.0, cubic(coeffs, levels))
    combos = np.array(list(combinations_with_replacement(range(len(levels)), size)), dtype=np.int64)
    supply = np.zeros(len(combos))
    power = np.zeros(len(combos))
    for j in range(size):
        supply = supply + levels[combos[:, j]] * capacity
        power = power + lvl_power[combos[:, j]]
    return supply, power, levels[combos]


def _groups(plant: PlantConfig):
    groups = {}
    for i, c in enumerate(plant.chillers):
        groups.setdefault(c.model_key, []).append(i)
    return list(groups.items())


def optimize_dispatch_bruteforce(plant: PlantConfig, load: float, step: float = 0.01) -> DispatchSolution:
    """Exhaustive search over ``{0} U {min_plr, min_plr + step, ..., 1}``.

    Identical chillers are enumerated as sorted multisets. Among equal-power
    optima the first in lexicographic order wins, and within a group of
    identical chillers the smaller ratios go to the earlier chillers.
    """
    if load < 0:
        raise InputError("negative cooling load")
    n = len(plant)
    if load == 0:
        return _finish(plant, np.zeros(n), True, "bruteforce")
    if load > plant.capacity + 1e-9:
        return _finish(plant, np.ones(n), False, "bruteforce")
    groups = _groups(plant)
    tables = [_group_table(key[0], key[1], key[2], step, len(idx)) for key, idx in groups]
    best, _ = kernels.bruteforce_search([(t[0], t[1]) for t in tables], load)
    if best is None:
        return _finish(plant, np.ones(n), False, "bruteforce")
    plr = np.zeros(n)
    for (key, idx), table, row in zip(groups, tables, best):
        plr[idx] = table[2][row]
    return _finish(plant, plr, True, "bruteforce")


# --------------------------------------------------------------------------
# genetic algorithm


@dataclass
class GaConfig:
    population: int = 80
    generations: int = 200
    crossover_rate: float = 0.8
    mutation_rate: float = 0.1
    mutation_sigma: float = 0.05
    elitism: int = 2
    function_tolerance: float = 1e-6
    stall_generations: int = 30
    constraint_tolerance: float = 0.5  # RT
    plr_resolution: Optional[float] = 0.01  # None -> continuous ratios
    mutation_shrink: float = 1.0  # sigma decays linearly to (1 - shrink) * sigma
    selection_shift: str = "median"  # median | worst
    decoder: str = "load-share"  # load-share | direct
    seed: int = 0

    def validate(self):
        if self.population < 2 or self.generations < 1:
            raise ConfigError("GA needs population >= 2 and generations >= 1")
        for name in ("crossover_rate", "mutation_rate"):
            if not 0 <= getattr(self, name) <= 1:
                raise ConfigError(f"ga.{name} must lie in [0, 1]")
        if not 0 <= self.elitism < self.population:
            raise ConfigError("ga.elitism must be below the population size")


def _decode(on, x, min_plr, res, caps=None, load=None):
    """Genotype -> PLR matrix.

    With ``caps``/``load`` given, running chillers' PLR genes act as load
    shares: they are scaled together so the supply equals the load and
    clipped to ``[min_plr, 1]``, then placed on the ``res`` grid by flooring
    and handing single steps to the largest remainders until the load is
    covered. Without them each gene is rounded to the nearest grid point.
    """
    x = np.asarray(x, dtype=np.float64)
    if load is None:
        if res:
            x = np.minimum(np.round(min_plr + np.round((x - min_plr) / res) * res, 10), 1.0)
        return np.where(on, x, 0.0)

    weight = np.where(on, x * caps, 0.0).sum(axis=1)
    scale = np.where(weight > 0, load / np.where(weight > 0, weight, 1.0), 0.0)
    x = np.clip(x * scale[:, None], min_plr, 1.0)
    if not res:
        return np.where(on, x, 0.0)
    steps = np.round((x - min_plr) / res, 9)
    base = np.floor(steps)
    frac = steps - base
    lo = np.where(on, np.minimum(np.round(min_plr + base * res, 10), 1.0), 0.0)
    room = on & (lo < 1.0)
    short = load - (lo * caps).sum(axis=1)
    # largest remainder first; chillers already at full load are skipped
    order = np.argsort(np.where(room, -frac, np.inf), axis=1, kind="stable")
    gain = np.take_along_axis(np.where(room, res * caps, 0.0), order, axis=1)
    before = np.cumsum(gain, axis=1) - gain
    bump_sorted = (before < short[:, None] - 1e-9) & (gain > 0)
    bump = np.zeros_like(bump_sorted)
    np.put_along_axis(bump, order, bump_sorted, axis=1)
    return np.where(bump, np.minimum(np.round(lo + res, 10), 1.0), lo)


def _repair(plant: PlantConfig, plr, load, res):
    """Raise running chillers until the load is covered exactly or better."""
    plr = plr.copy()
    caps = np.array([c.capacity for c in plant.chillers])
    mins = np.array([c.min_plr for c in plant.chillers])
    supplied = float(plr @ caps)
    if supplied >= load:
        return plr
    on = plr > 0
    if on.any() and supplied > 0:
        plr[on] = np.minimum(plr[on] * (load / supplied), 1.0)
        if res:
            plr[on] = np.minimum(np.round(mins[on] + np.ceil(np.round((plr[on] - mins[on]) / res, 9)) * res, 10), 1.0)
    bump = res or 1e-3
    while float(plr @ caps) < load:
        running = np.flatnonzero((plr > 0) & (plr < 1.0))
        if len(running):
            j = running[np.argmin(plr[running])]
            plr[j] = min(round(plr[j] + bump, 10), 1.0)
            continue
        idle = np.flatnonzero(plr == 0)
        if not len(idle):
            break
        j = idle[np.argmin(caps[idle])]
        plr[j] = mins[j]
    return plr


def optimize_dispatch_ga(plant: PlantConfig, load: float, cfg: GaConfig = GaConfig()) -> DispatchSolution:
    """Minimise total power with a genetic algorithm.

    Each individual carries an on/off gene and a PLR gene per chiller.
    Fitness is total power plus ``lam * shortfall**2``, plus a flat offset
    above the plant's full-load power whenever the shortfall exceeds the
    constraint tolerance, so every feasible individual outranks every
    infeasible one. Parents are drawn by roulette on the negated fitness
    shifted by the population median (``selection_shift``), followed by single-point crossover,
    Gaussian PLR mutation with clamping, bit-flip on/off mutation and
    elitism. The winner is repaired to exact feasibility.
    """
    cfg.validate()
    if load < 0:
        raise InputError("negative cooling load")
    n = len(plant)
    if load == 0:
        return _finish(plant, np.zeros(n), True, "ga")
    if load > plant.capacity + 1e-9:
        return _finish(plant, np.ones(n), False, "ga")

    rng = np.random.default_rng(cfg.seed)
    caps = np.array([c.capacity for c in plant.chillers])
    coeffs = np.array([c.coeffs for c in plant.chillers])
    mins = np.array([c.min_plr for c in plant.chillers])
    full_power = float(sum(cubic(c.coeffs, 1.0) for c in plant.chillers))
    offset = full_power + 1.0
    lam = 10.0 * full_power / max(caps.min(), 1.0) ** 2
    ctol = cfg.constraint_tolerance
    pop = cfg.population

    on = rng.random((pop, n)) < 0.5
    x = mins + (1.0 - mins) * rng.random((pop, n))

    share = (caps, load) if cfg.decoder == "load-share" else ()

    def evaluate(on, x):
        plr = _decode(on, x, mins, cfg.plr_resolution, *share)
        score, power, supplied = kernels.ga_score(plr, caps, coeffs, load, lam, ctol, offset)
        return score, supplied

    score, supplied = evaluate(on, x)
    best_hist = [float(score.min())]
    for gen in range(cfg.generations):
        order = np.argsort(score, kind="stable")
        elite_on, elite_x = on[order[: cfg.elitism]], x[order[: cfg.elitism]]

        ref = np.median(score) if cfg.selection_shift == "median" else score.max()
        weight = np.maximum(ref - score, 0.0)
        total = weight.sum()
        prob = weight / total if total > 0 else np.full(pop, 1.0 / pop)
        n_child = pop - cfg.elitism
        parents = rng.choice(pop, size=(n_child + 1) // 2 * 2, p=prob)
        c_on = on[parents].copy()
        c_x = x[parents].copy()
        if n > 1:
            for k in range(0, len(parents), 2):
                if rng.random() < cfg.crossover_rate:
                    cut = rng.integers(1, n)
                    c_on[k, cut:], c_on[k + 1, cut:] = on[parents[k + 1], cut:], on[parents[k], cut:]
                    c_x[k, cut:], c_x[k + 1, cut:] = x[parents[k + 1], cut:], x[parents[k], cut:]
        c_on, c_x = c_on[:n_child], c_x[:n_child]
        mut = rng.random(c_x.shape) < cfg.mutation_rate
        sigma = cfg.mutation_sigma * (1.0 - cfg.mutation_shrink * gen / cfg.generations)
        c_x = np.where(mut, c_x + rng.normal(0.0, sigma, c_x.shape), c_x)
        c_x = np.clip(c_x, mins, 1.0)
        flip = rng.random(c_on.shape) < cfg.mutation_rate
        c_on = c_on ^ flip

        on = np.concatenate([elite_on, c_on])
        x = np.concatenate([elite_x, c_x])
        score, supplied = evaluate(on, x)
        best_hist.append(float(score.min()))

        w = cfg.stall_generations
        if gen + 1 >= w:
            avg_change = (best_hist[-w - 1] - best_hist[-1]) / w
            violation = max(0.0, load - supplied[np.argmin(score)])
            if avg_change < cfg.function_tolerance * max(1.0, abs(best_hist[-1])) and violation <= ctol:
                break

    i = int(np.argmin(score))
    plr = _decode(on[i:i + 1], x[i:i + 1], mins, cfg.plr_resolution, *share)[0]
    plr = _repair(plant, plr, load, cfg.plr_resolution)
    feasible = float(plr @ caps) >= load - 1e-9
    return _finish(plant, plr, feasible, "ga")


# --------------------------------------------------------------------------
# scheduling


@dataclass
class DispatchPlan:
    timestamps: np.ndarray
    loads: np.ndarray
    solutions: list
    step_hours: float = 0.5
    chiller_ids: list = field(default_factory=list)

    @property
    def powers(self) -> np.ndarray:
        return np.array([s.total_power for s in self.solutions])

    @property
    def energy_kwh(self) -> float:
        return float(np.sum(self.powers * self.step_hours))

    @property
    def max_demand_kw(self) -> float:
        return float(self.powers.max()) if self.solutions else 0.0

    @property
    def infeasible_slots(self) -> list:
        return [i for i, s in enumerate(self.solutions) if not s.feasible]

    @property
    def partial(self) -> bool:
        return bool(self.infeasible_slots)

    def to_frame(self, oracle: Optional["DispatchPlan"] = None) -> pd.DataFrame:
        df = pd.DataFrame({"time": format_timestamps(self.timestamps), "load_rt": self.loads})
        plr = np.array([s.plr for s in self.solutions])
        for j, cid in enumerate(self.chiller_ids):
            df[f"plr_{cid}"] = np.round(plr[:, j], 10)
        df["total_power_kw"] = self.powers
        df["feasible"] = [int(s.feasible) for s in self.solutions]
        if oracle is not None:
            df["oracle_power_kw"] = oracle.powers
            df["gap_pct"] = 100.0 * (self.powers - oracle.powers) / np.where(oracle.powers > 0, oracle.powers, 1.0)
        return df


def schedule_dispatch(plant: PlantConfig, loads: LoadSeries, cfg: GaConfig = GaConfig(), method: str = "ga", step: float = 0.01) -> DispatchPlan:
    """One optimised loading per slot; slot ``i`` runs the GA with seed ``cfg.seed + i``."""
    if len(loads) == 0:
        raise InputError("empty load series")
    sols = []
    for i, load in enumerate(loads.values):
        load = max(float(load), 0.0)
        if method == "oracle":
            sols.append(optimize_dispatch_bruteforce(plant, load, step))
        elif method == "ga":
            slot_cfg = GaConfig(**{**cfg.__dict__, "seed": cfg.seed + i})
            sols.append(optimize_dispatch_ga(plant, load, slot_cfg))
        else:
            raise ConfigError(f"unknown dispatch method {method!r}")
    return DispatchPlan(loads.timestamps, loads.values.copy(), sols, loads.step_min / 60.0, [c.id for c in plant.chillers])
