"""Run configuration: a single JSON document with strict key validation.

CLI flags override individual keys; the effective config (and its hash)
is dumped next to every output tree so derived artifacts can be checked
for staleness.
"""

from __future__ import annotations

import copy
import hashlib
import json

DEFAULT_CONFIG = {
    "seed": 0,
    "rate": 10000,
    "stft": {"window_ms": 25.6, "overlap": 0.5, "window": "hann"},
    "scene": {
        "azimuths": [30.0],
        "snrs_db": [-15.0, -10.0, -5.0, 0.0, 5.0, 10.0, 15.0],
        "noise_kinds": ["white"],
        "noise_azimuth": 0.0,
    },
    "hrir": {"dir": None, "synthetic": True, "grid_deg": 5.0},
    "mask": {
        "beam_width": 64,
        "weights": "uniform",
        "mod_window": 30,
        "clip_lambda": 6.623,
    },
    "train": {
        "lr": 0.3,
        "momentum": 0.9,
        "batch_size": 128,
        "epochs": 40,
        "val_split": 0.3,
        "patience": 10,
        "normalize": "sum_weights_only",
        "standardize": True,
        "dims": [90, 500, 500, 500, 500, 129],
        "dropout": 0.2,
        "train_fraction": 0.7,
    },
    "omlsa": {
        "g_min_db": -20.0,
        "alpha_dd": 0.92,
        "xi_min_db": -25.0,
        "p_min": 0.005,
        "p_max": 0.998,
        "reference": "better_ear",
    },
    "metrics": {"silence_range_db": 40.0, "ild_energy_range_db": 40.0},
    "mix": {"speech_level": "p56"},
}


class ConfigError(Exception):
    pass


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key: {where}")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"{where} must be an object")
            out[key] = _merge(base[key], val, where)
        else:
            out[key] = val
    return out


def load_config(path=None, overrides: dict | None = None) -> dict:
    """Defaults, optionally updated from a JSON file and override dict."""
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        with open(path) as f:
            cfg = _merge(cfg, json.load(f))
    if overrides:
        cfg = _merge(cfg, overrides)
    return cfg


def config_hash(cfg: dict) -> str:
    """Short stable digest of the effective configuration."""
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def dump_config(cfg: dict, path) -> None:
    with open(path, "w") as f:
        json.dump(cfg, f, indent=2, sort_keys=True)
        f.write("\n")
