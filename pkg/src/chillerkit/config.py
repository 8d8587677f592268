"""Run configuration: one flat ``section.key`` document shared by every command.

Files are JSON, either flat (``{"nn.epochs": 20}``) or nested
(``{"nn": {"epochs": 20}}``). Unknown keys are rejected.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import fields
from pathlib import Path
from typing import Optional

from . import __version__
from .dispatch import GaConfig
from .errors import ConfigError
from .features import FEATURE_SET_NAMES
from .ingest import SynthConfig
from .kalman import KalmanConfig
from .nn.training import TrainConfig

# Design proposals, one fleet + operating policy each.
DEFAULT_PROPOSALS = [
    {"name": "Proposal 1", "chillers": ["CH1", "CH2"], "policy": "preset1"},
    {"name": "Proposal 2", "chillers": ["CH1", "CH2", "CH4"], "policy": "preset2"},
    {"name": "Proposal 3", "chillers": ["CH1", "CH2", "CH3", "CH4"], "policy": "preset3"},
    {"name": "Proposal 4", "chillers": ["CH1", "CH4"], "policy": "preset4"},
]


def _section(prefix, dc, skip=()):
    return {f"{prefix}.{f.name}": copy.deepcopy(getattr(dc, f.name)) for f in fields(dc) if f.name not in skip}


def _defaults() -> dict:
    d = {"seed": 0, "paths.plant": None}
    synth = _section("synth", SynthConfig())
    synth = {k: list(v) if isinstance(v, tuple) else v for k, v in synth.items()}
    d.update(synth)
    d.update({"ingest.max_gap": 2, "ingest.delimiter": ",", "ingest.flow_unit": "kg/s"})
    d.update(_section("kalman", KalmanConfig()))
    d.update({
        "features.sets": list(FEATURE_SET_NAMES),
        "features.train_fraction": 0.70,
        "features.holidays": [],
        "features.kmeans_restarts": 10,
        "features.kmeans_max_iter": 300,
    })
    nn = _section("nn", TrainConfig(), skip=("seed",))
    nn["nn.split"] = list(nn["nn.split"])
    d.update(nn)
    d["nn.families"] = ["mlp", "lstm"]
    d.update(_section("ga", GaConfig(), skip=("seed",)))
    d.update({"dispatch.step": 0.01, "dispatch.window_start": "08:30", "dispatch.window_end": "18:00"})
    d.update({
        "tes.peak_rate": 0.2967,
        "tes.offpeak_rate": 0.1843,
        "tes.capacity_rate": 16.48,
        "tes.peak_start": "07:00",
        "tes.peak_end": "23:00",
        "tes.capex_chiller": 654.00,
        "tes.capex_tes": 71.09,
        "tes.retention": 0.999,
        "tes.capacity_kwh": None,
        "tes.max_charge_kw": None,
        "tes.max_discharge_kw": None,
        "tes.proposals": copy.deepcopy(DEFAULT_PROPOSALS),
    })
    return d


DEFAULTS = _defaults()


def _flatten(doc, prefix=""):
    out = {}
    for k, v in doc.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict) and key not in DEFAULTS:
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _coerce(key, value, default):
    if default is None or value is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected true/false, got {value!r}")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or value != int(value):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return int(value)
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str) and not isinstance(value, str):
        raise ConfigError(f"{key}: expected a string, got {value!r}")
    if isinstance(default, list) and not isinstance(value, list):
        raise ConfigError(f"{key}: expected a list, got {value!r}")
    return value


class RunConfig:
    """Resolved configuration (defaults overlaid with user values)."""

    def __init__(self, values: Optional[dict] = None):
        self.values = copy.deepcopy(DEFAULTS)
        for k, v in _flatten(values or {}).items():
            if k not in DEFAULTS:
                raise ConfigError(f"unknown config key {k!r}")
            self.values[k] = _coerce(k, v, DEFAULTS[k])

    @classmethod
    def load(cls, path=None, overrides: Optional[dict] = None) -> "RunConfig":
        doc = {}
        if path is not None:
            p = Path(path)
            if not p.exists():
                raise ConfigError(f"config file not found: {p}")
            try:
                doc = json.loads(p.read_text())
            except json.JSONDecodeError as e:
                raise ConfigError(f"{p}: invalid JSON ({e})") from None
            if not isinstance(doc, dict):
                raise ConfigError(f"{p}: top level must be an object")
        doc = _flatten(doc)
        doc.update(overrides or {})
        return cls(doc)

    def __getitem__(self, key):
        return self.values[key]

    @property
    def seed(self) -> int:
        return self.values["seed"]

    def section(self, name: str) -> dict:
        n = len(name) + 1
        return {k[n:]: v for k, v in self.values.items() if k.startswith(name + ".")}

    def canonical(self) -> str:
        return json.dumps(self.values, sort_keys=True, separators=(",", ":"))

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]

    def header(self) -> dict:
        return {"tool": "chillerkit", "version": __version__, "config_hash": self.hash, "seed": self.seed}

    # -- typed views -------------------------------------------------------

    def synth(self) -> SynthConfig:
        s = self.section("synth")
        for k in ("weekday_profile", "weekend_profile"):
            s[k] = tuple(s[k])
        return SynthConfig(**s)

    def kalman(self) -> KalmanConfig:
        return KalmanConfig(**self.section("kalman"))

    def train(self) -> TrainConfig:
        s = self.section("nn")
        s.pop("families")
        s["split"] = tuple(s["split"])
        cfg = TrainConfig(seed=self.seed, **s)
        cfg.validate()
        return cfg

    def ga(self) -> GaConfig:
        cfg = GaConfig(seed=self.seed, **self.section("ga"))
        cfg.validate()
        return cfg
