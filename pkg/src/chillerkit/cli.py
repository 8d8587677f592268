"""Command-line driver: one subcommand per pipeline stage plus ``report``.

Every artifact starts with a header naming the tool version, the config
hash and the seed. CSV headers are ``#`` comment lines; JSON artifacts carry
a leading ``"header"`` object. Failures print a single line
``ERROR <CODE>: <message>`` to stderr and exit with the code attached to the
exception class (2 config, 3 input, 4 infeasible, 5 training).
"""

from __future__ import annotations

import argparse
import json
import re
import sys
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd

from . import __version__
from .config import RunConfig
from .dispatch import load_plant, schedule_dispatch
from .errors import ChillerKitError, ConfigError, InfeasibleError, InputError
from .features import (
    ClusterModel,
    FeatureMatrix,
    FeatureSpec,
    ScalerParams,
    build_features,
    fit_weather_clusters,
)
from .ingest import (
    LoadSeries,
    PhysConstants,
    day_type,
    format_timestamps,
    frame_to_csv,
    minutes_of_day,
    parse_telemetry,
    parse_timestamps,
    parse_weather,
    resample_half_hour,
    synth_generate,
    write_rejects,
)
from .kalman import kf_filter_series
from .nn import load_model, predict_series, train
from .tes import (
    CapexRates,
    Policy,
    ProposalConfig,
    Stage,
    TariffSchedule,
    TesConfig,
    compare_proposals,
    cost_analysis,
    simulate_proposal,
)

# --------------------------------------------------------------------------
# artifact io


def _header_lines(cfg: RunConfig, command: str) -> list:
    # the command name is left out so a stage re-run reproduces report output exactly
    h = cfg.header()
    return [f"{h['tool']} {h['version']}", f"config_hash: {h['config_hash']}", f"seed: {h['seed']}"]


def write_csv(path, df: pd.DataFrame, cfg: RunConfig, command: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(frame_to_csv(df, _header_lines(cfg, command)))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def write_json(path, body: dict, cfg: RunConfig, command: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {"header": cfg.header()}
    doc.update(_jsonable(body))
    path.write_text(json.dumps(doc, indent=2) + "\n")


def _need(path) -> Path:
    p = Path(path)
    if not p.exists():
        raise InputError(f"no such file: {p}")
    return p


def read_json(path) -> dict:
    p = _need(path)
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise InputError(f"{p}: invalid JSON ({e})") from None


def read_csv(path) -> pd.DataFrame:
    return pd.read_csv(_need(path), comment="#", float_precision="round_trip")


def read_load(path) -> LoadSeries:
    return LoadSeries.from_frame(read_csv(path))


def write_load(path, series: LoadSeries, cfg, command):
    write_csv(path, series.to_frame(), cfg, command)


def write_features(path, fm: FeatureMatrix, cfg, command):
    df = pd.DataFrame(fm.X, columns=[c[0] for c in fm.columns])
    df.insert(0, "timestamp", format_timestamps(fm.timestamps))
    df["target_rt"] = fm.y
    df["current_load_rt"] = fm.current_load
    write_csv(path, df, cfg, command)
    write_json(_meta_path(path), fm.meta(), cfg, command)


def _meta_path(path) -> Path:
    p = Path(path)
    return p.with_name(p.stem + ".meta.json")


def read_features(path) -> FeatureMatrix:
    df = read_csv(path)
    meta = read_json(_meta_path(path))
    cols = [tuple(c) for c in meta["columns"]]
    names = [c[0] for c in cols]
    missing = [n for n in names + ["timestamp", "target_rt", "current_load_rt"] if n not in df.columns]
    if missing:
        raise InputError(f"{path}: missing feature columns {missing}")
    return FeatureMatrix(
        spec=FeatureSpec.from_name(meta["feature_set"]),
        X=df[names].to_numpy(dtype=np.float64),
        y=df["target_rt"].to_numpy(dtype=np.float64),
        timestamps=parse_timestamps(df["timestamp"]),
        columns=cols,
        load_scaler=ScalerParams.from_dict(meta["load_scaler"]),
        current_load=df["current_load_rt"].to_numpy(dtype=np.float64),
        train_rows=int(meta["train_rows"]),
    )


def _strip_header(doc: dict) -> dict:
    return {k: v for k, v in doc.items() if k != "header"}


def _slug(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9]+", "_", name).strip("_").lower()


# --------------------------------------------------------------------------
# stages (shared by the subcommands and ``report``)


def stage_synth(cfg: RunConfig, out: Path, command="synth"):
    tel, weather = synth_generate(cfg.synth(), cfg.seed)
    write_csv(out / "telemetry.csv", tel.to_frame(), cfg, command)
    write_csv(out / "weather.csv", weather.to_frame(), cfg, command)
    return out / "telemetry.csv", out / "weather.csv"


def stage_filter(cfg: RunConfig, telemetry: Path, out: Path, command="filter"):
    schema = {"flow_unit": cfg["ingest.flow_unit"]}
    tel = parse_telemetry(telemetry, schema, cfg["ingest.delimiter"])
    out.mkdir(parents=True, exist_ok=True)
    if tel.rejects or tel.flags:
        write_rejects(out / "telemetry.rejects.txt", tel)
    raw = resample_half_hour(tel, PhysConstants(), cfg["ingest.max_gap"])
    filtered = kf_filter_series(raw, cfg.kalman())
    write_load(out / "load_raw.csv", raw, cfg, command)
    write_load(out / "load_filtered.csv", filtered, cfg, command)
    return out / "load_raw.csv", out / "load_filtered.csv"


def _cluster_train_rows(cfg: RunConfig, n: int) -> int:
    # safe for every lag depth: never reaches past the first training row count
    return max(2, int(cfg["features.train_fraction"] * (n - 5)))


def stage_cluster(cfg: RunConfig, weather_path: Path, k: int, out: Path, command="cluster"):
    weather = parse_weather(weather_path, delimiter=cfg["ingest.delimiter"])
    model = fit_weather_clusters(weather, k, cfg.seed, _cluster_train_rows(cfg, len(weather)),
                                 restarts=cfg["features.kmeans_restarts"], max_iter=cfg["features.kmeans_max_iter"])
    write_json(out, json.loads(model.to_json()), cfg, command)
    return out


def read_cluster(path) -> ClusterModel:
    return ClusterModel.from_json(json.dumps(_strip_header(read_json(path))))


def stage_features(cfg: RunConfig, load_path: Path, weather_path: Path, name: str, cluster_path: Optional[Path], out: Path,
                   command="features"):
    spec = FeatureSpec.from_name(name)
    load = read_load(load_path)
    weather = parse_weather(weather_path, delimiter=cfg["ingest.delimiter"])
    cluster = read_cluster(cluster_path) if cluster_path is not None else None
    fm = build_features(load, weather, spec, cluster, holidays=cfg["features.holidays"],
                        train_fraction=cfg["features.train_fraction"])
    write_features(out, fm, cfg, command)
    return out


def stage_train(cfg: RunConfig, features_path: Path, family: str, model_out: Path, report_out: Path, command="train"):
    fm = read_features(features_path)
    model, report = train(family, fm, cfg.train())
    write_json(model_out, {"model": json.loads(model.to_json()), "feature_set": fm.spec.name,
                           "load_scaler": fm.load_scaler.to_dict()}, cfg, command)
    write_json(report_out, json.loads(report.to_json()), cfg, command)
    return report


def read_model(path):
    doc = read_json(path)
    if "model" not in doc:
        raise InputError(f"{path}: not a model file")
    return load_model(json.dumps(doc["model"])), ScalerParams.from_dict(doc["load_scaler"])


def stage_predict(cfg: RunConfig, model_path: Path, features_path: Path, out: Path, rows: str = "all", command="predict"):
    model, scaler = read_model(model_path)
    fm = read_features(features_path)
    n = len(fm)
    if rows == "test":
        s = cfg.train().split
        lo = int(s[0] * n) + int(s[1] * n)
        idx = np.arange(lo, n)
    else:
        idx = np.arange(n)
    pred = predict_series(model, fm, scaler, idx)
    df = pred.to_frame()
    df["actual_rt"] = fm.y[idx]
    write_csv(out, df, cfg, command)
    return pred


def stage_dispatch(cfg: RunConfig, loads_path: Path, out: Path, method: str = "ga", oracle: bool = False,
                   plant_path=None, command="dispatch"):
    plant = load_plant(plant_path or cfg["paths.plant"])
    loads = read_load(loads_path)
    plan = schedule_dispatch(plant, loads, cfg.ga(), method, cfg["dispatch.step"])
    ref = schedule_dispatch(plant, loads, cfg.ga(), "oracle", cfg["dispatch.step"]) if oracle and method != "oracle" else None
    df = plan.to_frame(ref)
    write_csv(out, df, cfg, command)
    summary = {
        "method": method,
        "slots": len(plan.solutions),
        "energy_kwh": plan.energy_kwh,
        "max_demand_kw": plan.max_demand_kw,
        "partial": plan.partial,
        "infeasible_slots": [format_timestamps(plan.timestamps[i:i + 1])[0] for i in plan.infeasible_slots],
    }
    if ref is not None:
        summary["oracle_energy_kwh"] = ref.energy_kwh
        summary["max_gap_pct"] = float(df["gap_pct"].max())
    write_json(Path(out).with_suffix(".summary.json"), summary, cfg, command)
    return plan, summary


def design_day(series: LoadSeries, holidays=()) -> LoadSeries:
    """The series itself if it is one day; otherwise the mean workday profile."""
    per_day = 1440 // series.step_min
    if len(series) == per_day:
        return series
    ts = series.timestamps
    slot = minutes_of_day(ts) // series.step_min
    work = day_type(ts, holidays)
    if not work.any():
        work = np.ones(len(ts), dtype=bool)
    prof = np.array([series.values[work & (slot == s)].mean() if np.any(work & (slot == s)) else np.nan for s in range(per_day)])
    if np.any(np.isnan(prof)):
        raise InputError("load series does not cover every half-hour of a day")
    day0 = ts[0].astype("datetime64[D]").astype("datetime64[m]")
    return LoadSeries(day0, prof, series.provenance, series.step_min)


def _tes_config(cfg: RunConfig, entry: dict) -> TesConfig:
    d = {"capacity_kwh": cfg["tes.capacity_kwh"], "max_charge_kw": cfg["tes.max_charge_kw"],
         "max_discharge_kw": cfg["tes.max_discharge_kw"], "retention": cfg["tes.retention"]}
    extra = entry.get("tes", {})
    unknown = set(extra) - set(d) - {"initial_soc_kwh"}
    if unknown:
        raise ConfigError(f"unknown tes keys in proposal {entry.get('name')!r}: {sorted(unknown)}")
    d.update(extra)
    return TesConfig(**d)


def _proposal(cfg: RunConfig, plant, entry: dict) -> ProposalConfig:
    for key in ("name", "chillers", "policy"):
        if key not in entry:
            raise ConfigError(f"proposal entry missing {key!r}")
    unknown = set(entry) - {"name", "chillers", "policy", "tes", "stages"}
    if unknown:
        raise ConfigError(f"unknown proposal keys {sorted(unknown)}")
    custom = None
    if entry["policy"] == "custom":
        st = entry.get("stages") or {}
        try:
            custom = Policy(Stage(tuple(st["offpeak"]["chillers"]), st["offpeak"]["mode"], st["offpeak"].get("level")),
                            Stage(tuple(st["peak"]["chillers"]), st["peak"]["mode"], st["peak"].get("level")),
                            bool(st.get("shared_level", False)))
        except (KeyError, TypeError) as e:
            raise ConfigError(f"proposal {entry['name']!r}: malformed stages ({e})") from None
    return ProposalConfig(entry["name"], plant.subset(entry["chillers"]), entry["policy"], _tes_config(cfg, entry), custom)


def stage_tes(cfg: RunConfig, loads_path: Path, out: Path, plant_path=None, command="tes"):
    plant = load_plant(plant_path or cfg["paths.plant"])
    day = design_day(read_load(loads_path), cfg["features.holidays"])
    tariff = TariffSchedule(cfg["tes.peak_rate"], cfg["tes.offpeak_rate"], cfg["tes.capacity_rate"],
                            cfg["tes.peak_start"], cfg["tes.peak_end"])
    capex = CapexRates(cfg["tes.capex_chiller"], cfg["tes.capex_tes"])
    c = PhysConstants()
    out.mkdir(parents=True, exist_ok=True)
    write_load(out / "design_day.csv", day, cfg, command)

    base_p = ProposalConfig("Baseline", plant, "optimal", TesConfig(capacity_kwh=0.0))
    base_e = simulate_proposal(base_p, day, tariff, c)
    reports = [cost_analysis(base_e, plant.capacity * c.kw_per_rt, base_p.tes, tariff, capex, name="Baseline")]
    write_csv(out / "ledger_baseline.csv", base_e.ledger, cfg, command)
    status = {"Baseline": "ok"}
    for entry in cfg["tes.proposals"]:
        p = _proposal(cfg, plant, entry)
        try:
            e = simulate_proposal(p, day, tariff, c)
        except InfeasibleError as exc:
            status[p.name] = f"{exc.code}: {exc}"
            continue
        status[p.name] = "ok"
        reports.append(cost_analysis(e, p.fleet.capacity * c.kw_per_rt, p.tes, tariff, capex, reports[0], p.name))
        write_csv(out / f"ledger_{_slug(p.name)}.csv", e.ledger, cfg, command)
    summary = {"status": status}
    if len(reports) > 1:
        comp = compare_proposals(reports, tariff, capex)
        write_csv(out / "comparison.csv", comp.table, cfg, command)
        summary["ranking"] = comp.ranking
        summary["ten_year_total"] = {r.name: r.ten_year_total for r in reports}
        summary["ten_year_savings_pct"] = {r.name: 100.0 * r.ten_year_savings for r in reports[1:]}
    write_json(out / "tes_summary.json", summary, cfg, command)
    return summary


# --------------------------------------------------------------------------
# report


def _hhmm(s: str) -> int:
    h, m = s.split(":")
    return int(h) * 60 + int(m)


def _dispatch_window(cfg: RunConfig, pred: LoadSeries, holidays) -> LoadSeries:
    """Last complete workday window of a prediction series."""
    ts = pred.timestamps
    a, b = _hhmm(cfg["dispatch.window_start"]), _hhmm(cfg["dispatch.window_end"])
    mod = minutes_of_day(ts)
    days = ts.astype("datetime64[D]")
    work = day_type(ts, holidays)
    for d in np.unique(days)[::-1]:
        sel = (days == d) & (mod >= a) & (mod <= b)
        if sel.sum() == (b - a) // pred.step_min + 1 and work[sel].all():
            idx = np.flatnonzero(sel)
            return LoadSeries(ts[idx[0]], pred.values[idx], "predicted", pred.step_min)
    raise InputError("predictions contain no complete workday dispatch window")


def cmd_report(cfg: RunConfig, out: Path):
    cmd = "report"
    data = out / "data"
    tel, weather = stage_synth(cfg, data, cmd)
    raw_p, filt_p = stage_filter(cfg, tel, out / "load", cmd)
    names = cfg["features.sets"]
    families = cfg["nn.families"]
    cluster_paths = {}
    rows = []
    best = None
    for name in names:
        spec = FeatureSpec.from_name(name)
        cpath = None
        if spec.weather_mode == "clustered":
            if spec.k not in cluster_paths:
                cluster_paths[spec.k] = stage_cluster(cfg, weather, spec.k, out / "clusters" / f"k{spec.k}.json", cmd)
            cpath = cluster_paths[spec.k]
        load_p = raw_p if spec.load_source == "raw" else filt_p
        fpath = out / "features" / f"{_slug(name)}.csv"
        stage_features(cfg, load_p, weather, name, cpath, fpath, cmd)
        row = {"feature_set": name}
        for fam in families:
            mpath = out / "models" / f"{fam}_{_slug(name)}.json"
            rep = stage_train(cfg, fpath, fam, mpath, out / "models" / f"{fam}_{_slug(name)}.eval.json", cmd)
            row[f"{fam}_train_rmse"] = rep.train_rmse
            row[f"{fam}_val_rmse"] = rep.val_rmse
            row[f"{fam}_test_rmse"] = rep.test_rmse
            if best is None or rep.val_rmse < best[0]:
                best = (rep.val_rmse, mpath, fpath, fam, name)
        rows.append(row)
    table = pd.DataFrame(rows)
    if "Benchmark" in names:
        b = table.loc[table.feature_set == "Benchmark"].iloc[0]
        for fam in families:
            table[f"{fam}_improvement_pct"] = 100.0 * (b[f"{fam}_test_rmse"] - table[f"{fam}_test_rmse"]) / b[f"{fam}_test_rmse"]
    write_csv(out / "rmse_table.csv", table, cfg, cmd)

    _, mpath, fpath, fam, name = best
    pred = stage_predict(cfg, mpath, fpath, out / "predictions.csv", "test", cmd)
    window = _dispatch_window(cfg, pred, cfg["features.holidays"])
    write_load(out / "dispatch_loads.csv", window, cfg, cmd)
    _, dsum = stage_dispatch(cfg, out / "dispatch_loads.csv", out / "dispatch_plan.csv", "ga", True, command=cmd)
    tsum = stage_tes(cfg, filt_p, out / "tes", command=cmd)

    summary = {
        "selected_model": {"family": fam, "feature_set": name, "val_rmse": best[0]},
        "rmse_table": table.to_dict(orient="records"),
        "dispatch": dsum,
        "tes": tsum,
    }
    write_json(out / "summary.json", summary, cfg, cmd)
    return summary


# --------------------------------------------------------------------------
# argument parsing


def _parse_set(items) -> dict:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        try:
            out[k.strip()] = json.loads(v)
        except json.JSONDecodeError:
            out[k.strip()] = v
    return out


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run-config file")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key (JSON value)")

    p = argparse.ArgumentParser(prog="chillerkit", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"chillerkit {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="generate synthetic telemetry and weather")
    s.add_argument("--out", required=True)

    s = sub.add_parser("filter", parents=[common], help="telemetry -> half-hour load, raw and Kalman-filtered")
    s.add_argument("--telemetry", required=True)
    s.add_argument("--out", required=True)

    s = sub.add_parser("cluster", parents=[common], help="k-means weather clusters")
    s.add_argument("--weather", required=True)
    s.add_argument("--k", type=int, required=True)
    s.add_argument("--out", required=True)

    s = sub.add_parser("features", parents=[common], help="assemble one feature set")
    s.add_argument("--load", required=True)
    s.add_argument("--weather", required=True)
    s.add_argument("--set-name", required=True, dest="set_name")
    s.add_argument("--cluster")
    s.add_argument("--out", required=True)

    s = sub.add_parser("train", parents=[common], help="train MLP or LSTM with multi-run selection")
    s.add_argument("--features", required=True)
    s.add_argument("--family", choices=["mlp", "lstm", "linear"], required=True)
    s.add_argument("--out", required=True, help="model file; the evaluation report goes next to it")

    s = sub.add_parser("predict", parents=[common], help="half-hour-ahead predictions")
    s.add_argument("--model", required=True)
    s.add_argument("--features", required=True)
    s.add_argument("--rows", choices=["all", "test"], default="all")
    s.add_argument("--out", required=True)

    s = sub.add_parser("dispatch", parents=[common], help="optimal chiller loading per slot")
    s.add_argument("--loads", required=True)
    s.add_argument("--plant")
    s.add_argument("--method", choices=["ga", "oracle"], default="ga")
    s.add_argument("--oracle", action="store_true", help="add brute-force reference columns")
    s.add_argument("--out", required=True)

    s = sub.add_parser("tes", parents=[common], help="simulate and cost the chiller + storage proposals")
    s.add_argument("--loads", required=True, help="one day, or a longer series reduced to its mean workday")
    s.add_argument("--plant")
    s.add_argument("--out", required=True)

    s = sub.add_parser("report", parents=[common], help="run the whole pipeline on synthetic data")
    s.add_argument("--out", required=True)
    return p


def run(args) -> int:
    overrides = _parse_set(args.set)
    if args.seed is not None:
        overrides["seed"] = args.seed
    cfg = RunConfig.load(args.config, overrides)
    out = Path(args.out)
    c = args.command
    if c == "synth":
        stage_synth(cfg, out)
    elif c == "filter":
        stage_filter(cfg, _need(args.telemetry), out)
    elif c == "cluster":
        stage_cluster(cfg, _need(args.weather), args.k, out)
    elif c == "features":
        stage_features(cfg, _need(args.load), _need(args.weather), args.set_name,
                       _need(args.cluster) if args.cluster else None, out)
    elif c == "train":
        stage_train(cfg, _need(args.features), args.family, out, out.with_suffix(".eval.json"))
    elif c == "predict":
        stage_predict(cfg, _need(args.model), _need(args.features), out, args.rows)
    elif c == "dispatch":
        plan, summary = stage_dispatch(cfg, _need(args.loads), out, args.method, args.oracle, args.plant)
        if plan.partial:
            raise InfeasibleError(f"load exceeds plant capacity at {len(plan.infeasible_slots)} slot(s): "
                                  + ", ".join(summary["infeasible_slots"]) + " (partial plan written)")
    elif c == "tes":
        summary = stage_tes(cfg, _need(args.loads), out, args.plant)
        bad = {k: v for k, v in summary["status"].items() if v != "ok"}
        if bad:
            raise InfeasibleError("; ".join(f"{k}: {v}" for k, v in bad.items()) + " (other proposals written)")
    elif c == "report":
        cmd_report(cfg, out)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return run(args)
    except ChillerKitError as e:
        msg = str(e).replace("\n", " ")
        print(f"ERROR {e.code}: {msg}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
