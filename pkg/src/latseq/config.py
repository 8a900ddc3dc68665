"""Run configuration: JSON files merged over defaults and validated."""
from __future__ import annotations

import copy
import json
import re
from dataclasses import asdict
from pathlib import Path

from .env import EnvConfig
from .ppo import PpoConfig

SCHEMA_VERSION = 1
METHODS = ("latprotrl", "cmaes-onehot", "cmaes-ved", "greedy", "pex-style", "random")
ORACLES = ("nk", "nk-file", "csv", "predictor")
MODES = ("active", "predictor", "double-loop")

DEFAULTS = {
    "schema_version": SCHEMA_VERSION,
    "seed": 0,
    "task": {
        "oracle": "nk",
        # nk: generated landscape and pool
        "L": 20,
        "K": 2,
        "vocabulary": None,  # ACGT for generated landscapes, amino acids for CSVs
        "pool_size": 10_000,
        "expected_mutations": 4.0,
        "landscape_seed": None,
        # nk-file: saved landscape plus pool CSV; csv / predictor: pool CSV
        "landscape": None,
        "path": None,
        "normalize": False,
        "lookup": "strict",
        # percentile band of the pool used as the starting dataset
        "band": "hard",
    },
    "ved": {
        "latent_dim": None,
        "augmentation": 4,
        "expected_mutations": 3.0,
        "holdout_fraction": 0.05,
        "epochs": 64,
        "batch_size": 64,
        "lr": 1e-3,
        "weight_decay": 1e-5,
        "decoder_hidden": [256],
        "checkpoint": None,
    },
    # m_decode has no default: the right value depends on the task
    "env": {"delta": 0.1, "T_ep": 4, "m_step": 3, "m_total": 15, "m_decode": None},
    "ppo": asdict(PpoConfig()),
    "buffer": {"size": 128, "epsilon_decay": 0.96, "update_period": 50, "temperature": 10.0},
    "run": {
        "method": "latprotrl",
        "mode": "active",
        "rounds": 15,
        "calls_per_round": 256,
        "no_buffer": False,
        "no_calibration": False,
        "state_action_mode": "lat/lat",
        "total_timesteps": 20_000,
        "rollout_steps": 2048,
        "double_loop": [5, 2, 10],
        "predictor": {"hidden": 64, "epochs": 100, "batch_size": 64, "lr": 1e-3},
        "random_radius": 3,
        "greedy_threshold": 0.05,
        "cmaes_sigma": None,
        "save_checkpoints": True,
    },
}

# keys whose value is free-form (not checked against the defaults)
_OPEN_KEYS = {("task", "vocabulary"), ("task", "band"), ("task", "landscape_seed"), ("task", "landscape"), ("task", "path"),
              ("ved", "latent_dim"), ("ved", "checkpoint"), ("run", "cmaes_sigma"), ("env", "m_decode")}


class ConfigError(ValueError):
    """Invalid configuration; the message names the file, line and key where known."""


def _line_of(text: str | None, key: str) -> int | None:
    if not text:
        return None
    m = re.search(r'"%s"\s*:' % re.escape(key), text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def _where(source, text, path):
    line = _line_of(text, path[-1]) if path else None
    loc = str(source) if source else "config"
    if line is not None:
        loc += f":{line}"
    return f"{loc}: {'.'.join(path)}"


def _merge(base, user, path, source, text):
    out = copy.deepcopy(base)
    for key, value in user.items():
        p = (*path, key)
        if key not in base:
            raise ConfigError(f"{_where(source, text, p)}: unknown key")
        default = base[key]
        if p in _OPEN_KEYS or default is None:
            out[key] = value
        elif isinstance(default, dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{_where(source, text, p)}: expected an object")
            if p == ("run", "predictor"):
                out[key] = {**default, **value}
            else:
                out[key] = _merge(default, value, p, source, text)
        elif isinstance(default, bool):
            if not isinstance(value, bool):
                raise ConfigError(f"{_where(source, text, p)}: expected true/false, got {value!r}")
            out[key] = value
        elif isinstance(default, int):
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"{_where(source, text, p)}: expected an integer, got {value!r}")
            out[key] = value
        elif isinstance(default, float):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{_where(source, text, p)}: expected a number, got {value!r}")
            out[key] = float(value)
        elif isinstance(default, str):
            if not isinstance(value, str):
                raise ConfigError(f"{_where(source, text, p)}: expected a string, got {value!r}")
            out[key] = value
        elif isinstance(default, list):
            if not isinstance(value, list):
                raise ConfigError(f"{_where(source, text, p)}: expected a list, got {value!r}")
            out[key] = value
        else:
            out[key] = value
    return out


def resolve(user: dict | None = None, source=None, text: str | None = None, base_dir: Path | None = None,
            need_m_decode: bool = True) -> dict:
    """Merge ``user`` over the defaults and validate the result.

    Commands that never decode (landscape generation, VED training) pass
    ``need_m_decode=False``.
    """
    user = dict(user or {})
    version = user.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"{_where(source, text, ('schema_version',))}: unsupported version {version!r}")
    cfg = _merge(DEFAULTS, user, (), source, text)
    validate(cfg, source, text, base_dir, need_m_decode)
    return cfg


def load(path, base_dir: Path | None = None, need_m_decode: bool = True) -> dict:
    """Read a config file. A run metadata file (with a ``config`` entry) is accepted too."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc.strerror}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}:1: top level must be an object")
    if "config" in raw and isinstance(raw["config"], dict):
        raw = raw["config"]
    return resolve(raw, path, text, base_dir if base_dir is not None else path.parent, need_m_decode)


def _check(cond, source, text, path, msg):
    if not cond:
        raise ConfigError(f"{_where(source, text, path)}: {msg}")


def _existing(value, base_dir):
    p = Path(value)
    if not p.is_absolute() and base_dir is not None and not p.exists():
        alt = Path(base_dir) / p
        if alt.exists():
            return alt
    return p


def validate(cfg: dict, source=None, text=None, base_dir=None, need_m_decode=True):
    t, r = cfg["task"], cfg["run"]
    _check(t["oracle"] in ORACLES, source, text, ("task", "oracle"), f"must be one of {ORACLES}")
    _check(r["method"] in METHODS, source, text, ("run", "method"), f"must be one of {METHODS}")
    _check(r["mode"] in MODES, source, text, ("run", "mode"), f"must be one of {MODES}")
    _check(r["state_action_mode"] in ("lat/lat", "lat/mut", "seq/mut"), source, text,
           ("run", "state_action_mode"), "must be lat/lat, lat/mut or seq/mut")
    band = t["band"]
    ok = band in ("medium", "hard", "all") or (
        isinstance(band, list) and len(band) == 2 and all(isinstance(b, (int, float)) for b in band)
        and 0 <= band[0] < band[1] <= 100)
    _check(ok, source, text, ("task", "band"), "must be 'medium', 'hard', 'all' or [lo, hi] with 0 <= lo < hi <= 100")
    _check(t["lookup"] in ("strict", "nearest"), source, text, ("task", "lookup"), "must be strict or nearest")
    if t["oracle"] == "nk":
        _check(t["L"] >= 1, source, text, ("task", "L"), "must be positive")
        _check(0 <= t["K"] < t["L"], source, text, ("task", "K"), "must lie in [0, L-1]")
        _check(t["pool_size"] >= 1, source, text, ("task", "pool_size"), "must be positive")
    if t["oracle"] == "nk-file":
        _check(t["landscape"] is not None, source, text, ("task", "landscape"), "required for nk-file oracle")
    if t["oracle"] in ("nk-file", "csv", "predictor"):
        _check(t["path"] is not None, source, text, ("task", "path"), f"required for {t['oracle']} oracle")
    for key in ("path", "landscape"):
        if t[key] is not None:
            p = _existing(t[key], base_dir)
            _check(p.exists(), source, text, ("task", key), f"file not found: {t[key]}")
            t[key] = str(p)
    if cfg["ved"]["checkpoint"] is not None:
        p = _existing(cfg["ved"]["checkpoint"], base_dir)
        _check(p.exists(), source, text, ("ved", "checkpoint"), f"file not found: {cfg['ved']['checkpoint']}")
        cfg["ved"]["checkpoint"] = str(p)
    _check(r["rounds"] >= 0, source, text, ("run", "rounds"), "must be >= 0")
    _check(r["calls_per_round"] >= 1, source, text, ("run", "calls_per_round"), "must be positive")
    _check(cfg["buffer"]["size"] >= 1, source, text, ("buffer", "size"), "must be positive")
    dl = r["double_loop"]
    _check(len(dl) == 3 and all(isinstance(v, int) and v >= 0 for v in dl), source, text,
           ("run", "double_loop"), "must be [outer_rounds, predictor_rounds, final_rounds]")
    m = cfg["env"]["m_decode"]
    if m is not None or need_m_decode:
        _check(m is not None, source, text, ("env", "m_decode"), "required (maximum mutations applied per decode)")
        _check(isinstance(m, int) and not isinstance(m, bool), source, text, ("env", "m_decode"),
               f"expected an integer, got {m!r}")
        try:
            EnvConfig(latent_dim=1, **cfg["env"])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{_where(source, text, ('env',))}: {exc}") from None
    try:
        PpoConfig(**cfg["ppo"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{_where(source, text, ('ppo',))}: {exc}") from None


def band_range(band):
    if band == "medium":
        return 20.0, 40.0
    if band == "hard":
        return 10.0, 30.0
    if band == "all":
        return 0.0, 100.0
    return float(band[0]), float(band[1])
