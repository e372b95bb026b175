"""Sectioned run configuration (INI syntax) with typed defaults."""
from __future__ import annotations

import configparser
import copy
from pathlib import Path


class ConfigError(ValueError):
    pass


DEFAULTS: dict = {
    "data": {
        "traffic_path": "",
        "T": 12,
        "H": 12,
        "split": "60,20,20",
        "normalization": "window",
        "interval_minutes": 5,
    },
    "synth": {
        "n_nodes": 30,
        "t_total": 2016,
        "n_communities": 2,
        "period": 288,
        "noise": 0.1,
        "shared_noise": 0.5,
        "intra_p": 0.5,
        "inter_p": 0.02,
    },
    "graph": {
        "adjacency_path": "",
    },
    "teacher": {
        "n_layers": 3,
        "d": 64,
        "kernel_size": 3,
        "dropout": 0.1,
        "slope": 0.01,
    },
    "student": {
        "n_layers": 3,
        "conv_tail": False,
    },
    "distill": {
        "tau_spatial": 0.5,
        "tau_temporal": 0.5,
        "lambda_kl": 1.0,
        "lambda_cl": 1.0,
        "lr": 1e-3,
        "epochs": 200,
        "teacher_epochs": 200,
        "batch_size": 32,
        "patience": 15,
        "seed": 0,
        "optimizer": "adam",
        "kl_form": "kl",
        "freeze_teacher": True,
    },
    "bench": {
        "warmup": 1,
        "repeats": 5,
        "batch_size": 32,
        "precision": "float32",
        "mape_floor": 1.0,
    },
    "output": {
        "root": "runs",
    },
}


def _coerce(section: str, key: str, raw: str, default):
    try:
        if isinstance(default, bool):
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r} as {type(default).__name__}") from None
    return raw.strip()


def load_config(path=None, overrides: dict | None = None) -> dict:
    """Defaults, then the file at ``path``, then ``overrides`` ({section: {key: value}})."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        if not parser.read(path):
            raise ConfigError(f"cannot read config file {path}")
        for section in parser.sections():
            if section not in cfg:
                raise ConfigError(f"unknown section [{section}]")
            for key, raw in parser.items(section):
                if key not in cfg[section]:
                    raise ConfigError(f"[{section}] unknown key {key!r}")
                cfg[section][key] = _coerce(section, key, raw, DEFAULTS[section][key])
    for section, kv in (overrides or {}).items():
        if section not in cfg:
            raise ConfigError(f"unknown section [{section}]")
        for key, val in kv.items():
            if key not in cfg[section]:
                raise ConfigError(f"[{section}] unknown key {key!r}")
            cfg[section][key] = val
    return cfg


def dump_config(cfg: dict, path) -> None:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    for section, kv in cfg.items():
        parser[section] = {k: str(v) for k, v in kv.items()}
    with open(Path(path), "w") as fh:
        parser.write(fh)


def parse_split(text: str) -> tuple:
    try:
        parts = tuple(float(x) for x in str(text).split(","))
    except ValueError:
        raise ConfigError(f"[data] split: expected three comma-separated numbers, got {text!r}") from None
    if len(parts) != 3:
        raise ConfigError(f"[data] split: expected three comma-separated numbers, got {text!r}")
    return parts
