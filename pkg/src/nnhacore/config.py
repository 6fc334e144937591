"""Run configuration: one JSON document describing a reproducible run."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, HaCoreError
from .filterbank import FilterBankSpec
from .prescription import DEFAULT_INPUT_NORM, DEFAULT_OUTPUT_NORM, CompressorRule, TrainerConfig, default_rule
from .slm import DEFAULT_CALIBRATION_DB, DEFAULT_FLOOR_DB, SlmConfig

CONFIG_VERSION = 1

ENGINE_ALIASES = {"neural": "neural", "baseline": "compressor_baseline",
                  "compressor_baseline": "compressor_baseline"}

# section -> {key: default}; None marks "no default"
SCHEMA = {
    "version": CONFIG_VERSION,
    "filterbank": {"sample_rate_hz": 24000.0, "num_bands": 6, "base_center_hz": 250.0,
                   "min_freq_hz": 20.0},
    "slm": {"estimator": "rms", "calibration_db": DEFAULT_CALIBRATION_DB, "dc_offset": 0.0,
            "floor_db": DEFAULT_FLOOR_DB},
    "engine": "neural",
    "model": None,
    "rule": {"insertion_gain_db": None, "knee_db_spl": None, "compression_ratio": None},
    "baseline": {"attack_ms": 5.0, "release_ms": 50.0},
    "network": {"hidden_layers": [8], "input_norm": list(DEFAULT_INPUT_NORM),
                "output_norm": list(DEFAULT_OUTPUT_NORM)},
    "oracle": {"start_db": 20.0, "stop_db": 100.0, "step_db": 5.0},
    "trainer": {"learning_rate": 1e-3, "momentum": 0.9, "epochs": 5000, "batch_size": 32,
                "seed": 0},
    "personalize": {"learning_rate": 1e-3, "momentum": 0.9, "epochs": 500, "batch_size": 32,
                    "seed": 0, "anchor_weight": 1e-3},
    "paths": {"input": None, "output": None, "trace": None, "loss_log": None},
}


def _merge(defaults, doc, where):
    if not isinstance(doc, dict):
        raise ConfigError(f"{where or 'config'}: expected an object, got {type(doc).__name__}")
    unknown = sorted(set(doc) - set(defaults))
    if unknown:
        raise ConfigError(f"{where or 'config'}: unknown key(s) {', '.join(unknown)}")
    merged = {}
    for key, default in defaults.items():
        path = f"{where}.{key}" if where else key
        if isinstance(default, dict):
            merged[key] = _merge(default, doc.get(key, {}), path)
        else:
            merged[key] = copy.deepcopy(doc.get(key, default))
    return merged


def _band_vector(value, num_bands, name):
    arr = np.array(value, dtype=np.float64)
    if arr.ndim == 0:
        arr = np.full(num_bands, float(arr))
    if arr.shape != (num_bands,):
        raise ConfigError(f"{name}: expected a number or {num_bands} values, got {value!r}")
    return arr


@dataclass
class RunConfig:
    """Validated configuration document with typed accessors."""

    doc: dict

    @classmethod
    def from_dict(cls, doc: dict | None = None) -> "RunConfig":
        merged = _merge(SCHEMA, doc or {}, "")
        if merged["version"] != CONFIG_VERSION:
            raise ConfigError(f"unsupported config version {merged['version']!r}")
        cfg = cls(merged)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc.msg})") from exc
        return cls.from_dict(doc)

    def override(self, **flags) -> "RunConfig":
        """Return a copy with CLI flag values (those not ``None``) applied."""
        doc = copy.deepcopy(self.doc)
        mapping = {
            "input": ("paths", "input"), "output": ("paths", "output"),
            "trace": ("paths", "trace"), "loss_log": ("paths", "loss_log"),
            "model": ("model",), "engine": ("engine",), "seed": ("trainer", "seed"),
            "anchor_weight": ("personalize", "anchor_weight"),
        }
        for name, value in flags.items():
            if value is None:
                continue
            keys = mapping[name]
            target = doc
            for key in keys[:-1]:
                target = target[key]
            target[keys[-1]] = value
            if name == "seed":
                doc["personalize"]["seed"] = value
        cfg = RunConfig(doc)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        try:
            self.filterbank()
            self.slm()
            self.trainer()
            self.personalize_trainer()
            self.engine()
            self.rule()
            self.layer_sizes()
            b = self.doc["baseline"]
            if not (float(b["attack_ms"]) > 0 and float(b["release_ms"]) > 0):
                raise ConfigError("baseline.attack_ms and baseline.release_ms must be positive")
            o = self.doc["oracle"]
            if not float(o["step_db"]) > 0 or float(o["stop_db"]) < float(o["start_db"]):
                raise ConfigError("oracle: need step_db > 0 and stop_db >= start_db")
        except ConfigError:
            raise
        except (HaCoreError, ValueError, TypeError, KeyError) as exc:
            raise ConfigError(str(exc)) from exc

    def filterbank(self) -> FilterBankSpec:
        f = self.doc["filterbank"]
        return FilterBankSpec(float(f["sample_rate_hz"]), int(f["num_bands"]),
                              float(f["base_center_hz"]), float(f["min_freq_hz"])).validate()

    @property
    def num_bands(self) -> int:
        return int(self.doc["filterbank"]["num_bands"])

    def slm(self) -> SlmConfig:
        s = self.doc["slm"]
        m = self.num_bands
        return SlmConfig(dc_offset=_band_vector(s["dc_offset"], m, "slm.dc_offset"),
                         calibration_db=_band_vector(s["calibration_db"], m, "slm.calibration_db"),
                         estimator=s["estimator"], floor_db=float(s["floor_db"]))

    def engine(self) -> str:
        name = self.doc["engine"]
        if name not in ENGINE_ALIASES:
            raise ConfigError(f"engine must be 'neural' or 'baseline', got {name!r}")
        return ENGINE_ALIASES[name]

    def rule(self) -> CompressorRule:
        r = self.doc["rule"]
        m = self.num_bands
        if all(v is None for v in r.values()):
            return default_rule(m)
        if any(v is None for v in r.values()):
            raise ConfigError("rule: give all of insertion_gain_db, knee_db_spl, compression_ratio")
        return CompressorRule(_band_vector(r["insertion_gain_db"], m, "rule.insertion_gain_db"),
                              _band_vector(r["knee_db_spl"], m, "rule.knee_db_spl"),
                              _band_vector(r["compression_ratio"], m, "rule.compression_ratio"))

    def layer_sizes(self) -> list[int]:
        hidden = self.doc["network"]["hidden_layers"]
        if not isinstance(hidden, list) or any(int(h) != h or h < 1 for h in hidden):
            raise ConfigError(f"network.hidden_layers must be a list of positive integers, got {hidden!r}")
        return [self.num_bands] + [int(h) for h in hidden] + [self.num_bands]

    def network_kwargs(self) -> dict:
        n = self.doc["network"]
        return {"input_norm": tuple(n["input_norm"]), "output_norm": tuple(n["output_norm"])}

    def trainer(self) -> TrainerConfig:
        return TrainerConfig(**self.doc["trainer"])

    def personalize_trainer(self) -> TrainerConfig:
        return TrainerConfig(**self.doc["personalize"])

    def oracle_levels(self):
        o = self.doc["oracle"]
        return float(o["start_db"]), float(o["stop_db"]), float(o["step_db"])

    def path(self, name: str) -> Path | None:
        value = self.doc["model"] if name == "model" else self.doc["paths"][name]
        return Path(value) if value is not None else None
