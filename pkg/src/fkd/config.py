"""Experiment configuration: JSON in, validated dict out, stable content hash."""
import copy
import hashlib
import json
import os

DEFAULTS = {
    "name": "experiment",
    "dataset": {
        "kind": "synthetic",
        "n": 1000,
        "c": 7,
        "d0": 32,
        "avg_degree": 4.0,
        "target_h": [0.5],
        "feature_scale": 1.0,
    },
    "split": {"mode": "ratio", "ratios": [0.2, 0.2, 0.6], "k_train": 20, "n_val": 500, "n_test": 1000},
    "framelet": {"J": 1, "mode": "chebyshev", "degree": 10, "tolerance": None},
    "models": [
        {"teacher": "spatial", "student": "O"},
        {"teacher": "simplified", "student": "S"},
    ],
    "depth": 2,
    "eps": 0.0,
    "eps_s": 0.0,
    "lam": 0.5,
    "grid": {"lr": [0.01], "weight_decay": [0.01], "hidden": [64], "dropout": [0.0], "d_enc": [64]},
    "epochs": 200,
    "seeds": [0],
    "rewire": {"enabled": False, "max_iters": 10, "temperature": 5.0, "removal_threshold": None},
    "output_dir": "fkd_out",
}

GRID_ORDER = ("lr", "weight_decay", "hidden", "dropout", "d_enc")  # tie-break priority


class ConfigError(ValueError):
    pass


def _merge(base, override):
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _as_list(v):
    return list(v) if isinstance(v, (list, tuple)) else [v]


def normalize_config(raw, base_dir="."):
    """Fill defaults, coerce scalars to one-element grids and validate."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(raw) - set(DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    cfg = _merge(DEFAULTS, raw)
    ds = cfg["dataset"]
    if ds.get("kind") == "synthetic":
        ds["target_h"] = [float(h) for h in _as_list(ds["target_h"])]
        if not ds["target_h"] or any(not 0.0 <= h <= 1.0 for h in ds["target_h"]):
            raise ConfigError("dataset.target_h must be a non-empty list of values in [0, 1]")
    elif ds.get("kind") == "files":
        for key in ("edges", "features", "labels"):
            if key not in ds:
                raise ConfigError(f"dataset.{key} is required for file datasets")
            path = ds[key] if os.path.isabs(ds[key]) else os.path.join(base_dir, ds[key])
            if not os.path.exists(path):
                raise ConfigError(f"dataset.{key}: {path} does not exist")
            ds[key] = os.path.abspath(path)
    else:
        raise ConfigError(f"dataset.kind must be 'synthetic' or 'files', got {ds.get('kind')!r}")
    for k in GRID_ORDER:
        cfg["grid"][k] = _as_list(cfg["grid"][k])
        if not cfg["grid"][k]:
            raise ConfigError(f"grid.{k} must be non-empty")
    extra = set(cfg["grid"]) - set(GRID_ORDER)
    if extra:
        raise ConfigError(f"unknown grid axes: {sorted(extra)}")
    cfg["seeds"] = [int(s) for s in _as_list(cfg["seeds"])]
    if not cfg["seeds"]:
        raise ConfigError("seeds must be non-empty")
    if cfg["framelet"]["mode"] not in ("exact", "chebyshev"):
        raise ConfigError("framelet.mode must be 'exact' or 'chebyshev'")
    for m in cfg["models"]:
        if m.get("teacher") not in ("spatial", "simplified", "spectral") or m.get("student", "O") not in ("O", "S", None):
            raise ConfigError(f"invalid model entry {m}")
    if not 0.0 <= float(cfg["lam"]) <= 1.0:
        raise ConfigError("lam must be in [0, 1]")
    if int(cfg["epochs"]) < 0 or int(cfg["depth"]) < 1:
        raise ConfigError("epochs must be >= 0 and depth >= 1")
    return cfg


def load_config(path):
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return normalize_config(raw, base_dir=os.path.dirname(os.path.abspath(path)))


def config_hash(cfg):
    """sha256 of the canonical JSON of the normalized config, ignoring ``output_dir``."""
    body = {k: v for k, v in cfg.items() if k != "output_dir"}
    text = json.dumps(body, sort_keys=True, separators=(",", ":"), allow_nan=False)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()
