"""TOML run configuration with ``section.key=value`` overrides.

Precedence is override flags, then the file, then the defaults below.  Every
error names the offending field as ``section.key``.
"""

from __future__ import annotations

import copy
import os
from dataclasses import dataclass
from pathlib import Path

import tomli
import tomli_w

from .flow import FlowConfig
from .score import EXPLICIT, KERNEL, LikelihoodModel
from .trainer import TrainConfig
from .tuner import SearchSpace

DEFAULTS: dict = {
    "run": {"output_dir": "genuq-out", "seed": 0},
    "data": {"path": None, "x_cols": None, "y_cols": None, "test_fraction": 0.2},
    "flow": {"n_steps": 100, "t_min": 1e-3, "batch_size": 256, "n_labels": 20000,
             "loglik_cutoff": None, "chunk_size": 1024},
    "likelihood": {"mode": KERNEL, "sigma": None, "bandwidth": None},
    "search": {"widths": [32, 64, 128], "depths": [1, 2], "batch_sizes": [32, 64],
               "lr_min": 1e-4, "lr_max": 1e-2, "dropout_min": 0.01, "dropout_max": 0.3,
               "n_trials": 10, "max_epochs": 1000},
    "train": {"lr": 1e-3, "batch_size": 64, "max_epochs": 1000, "val_fraction": 0.1,
              "min_delta": 1e-5, "patience": 20, "gap_threshold": 0.1, "window": 5,
              "hidden_layers": 2, "hidden_width": 64, "dropout_rate": 0.05},
    "eval": {"K": 2000, "y_star": None},
}


class ConfigError(ValueError):
    """Invalid configuration; ``field`` is the dotted key at fault."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


def parse_override(item: str) -> tuple[str, str, object]:
    """Split ``section.key=value``; the value is read as a TOML literal when possible."""
    if "=" not in item:
        raise ConfigError(item, "override must look like section.key=value")
    key, raw = item.split("=", 1)
    key = key.strip()
    if key.count(".") != 1:
        raise ConfigError(key, "override key must look like section.key")
    section, name = key.split(".")
    try:
        value = tomli.loads(f"v = {raw.strip()}")["v"]
    except tomli.TOMLDecodeError:
        value = raw.strip()
    if isinstance(value, str) and value.lower() == "none":
        value = None
    return section, name, value


def merge(base: dict, file_values: dict, overrides: list[str] = ()) -> dict:
    out = copy.deepcopy(base)
    for section, values in file_values.items():
        if section not in out:
            raise ConfigError(section, "unknown section")
        if not isinstance(values, dict):
            raise ConfigError(section, "expected a table")
        for k, v in values.items():
            if k not in out[section]:
                raise ConfigError(f"{section}.{k}", "unknown key")
            out[section][k] = v
    for item in overrides:
        section, name, value = parse_override(item)
        if section not in out or name not in out[section]:
            raise ConfigError(f"{section}.{name}", "unknown key")
        out[section][name] = value
    return out


def _num(cfg, field, kind=float, lo=None, hi=None, lo_open=False, hi_open=False, optional=False):
    section, key = field.split(".")
    v = cfg[section][key]
    if v is None:
        if optional:
            return None
        raise ConfigError(field, "is required")
    if isinstance(v, bool) or not isinstance(v, (int, float)) or (kind is int and not isinstance(v, int)):
        raise ConfigError(field, f"expected {kind.__name__}, got {v!r}")
    if lo is not None and (v < lo or (lo_open and v == lo)):
        raise ConfigError(field, f"{v} below allowed range")
    if hi is not None and (v > hi or (hi_open and v == hi)):
        raise ConfigError(field, f"{v} above allowed range")
    return kind(v)


def _int_list(cfg, field):
    section, key = field.split(".")
    v = cfg[section][key]
    if not isinstance(v, list) or not v or not all(isinstance(i, int) and i >= 1 for i in v):
        raise ConfigError(field, "expected a nonempty list of positive integers")
    return tuple(v)


def _names(cfg, field):
    section, key = field.split(".")
    v = cfg[section][key]
    if v is None:
        return None
    if isinstance(v, str):
        v = [v]
    if not isinstance(v, list) or not v or not all(isinstance(s, str) for s in v):
        raise ConfigError(field, "expected a list of column names")
    return list(v)


@dataclass
class RunConfig:
    """Validated run settings; ``raw`` keeps the merged dictionary."""

    raw: dict
    base_dir: Path

    # ---- typed views -------------------------------------------------
    @property
    def seed(self) -> int:
        return self.raw["run"]["seed"]

    @property
    def output_dir(self) -> Path:
        return self._path(self.raw["run"]["output_dir"])

    @property
    def data_path(self) -> Path:
        return self._path(self.raw["data"]["path"])

    @property
    def x_cols(self):
        return _names(self.raw, "data.x_cols")

    @property
    def y_cols(self):
        return _names(self.raw, "data.y_cols")

    @property
    def test_fraction(self) -> float:
        return self.raw["data"]["test_fraction"]

    def _path(self, p) -> Path:
        p = Path(os.path.expanduser(str(p)))
        return p if p.is_absolute() else self.base_dir / p

    def flow(self) -> FlowConfig:
        f = self.raw["flow"]
        bs = f["batch_size"]
        return FlowConfig(n_steps=f["n_steps"], t_min=f["t_min"], batch_size=None if bs == 0 else bs,
                          n_labels=f["n_labels"], seed=self.seed, loglik_cutoff=f["loglik_cutoff"],
                          chunk_size=f["chunk_size"])

    def likelihood(self) -> LikelihoodModel:
        lk = self.raw["likelihood"]
        if lk["mode"] == EXPLICIT:
            return LikelihoodModel.explicit(lk["sigma"])
        return LikelihoodModel.kernel(lk["bandwidth"])

    def search_space(self) -> SearchSpace:
        s = self.raw["search"]
        return SearchSpace(widths=tuple(s["widths"]), depths=tuple(s["depths"]),
                           batch_sizes=tuple(s["batch_sizes"]), lr_range=(s["lr_min"], s["lr_max"]),
                           dropout_range=(s["dropout_min"], s["dropout_max"]),
                           n_trials=s["n_trials"], max_epochs=s["max_epochs"])

    def train_config(self) -> TrainConfig:
        t = self.raw["train"]
        return TrainConfig(lr=t["lr"], batch_size=t["batch_size"], max_epochs=t["max_epochs"],
                           val_fraction=t["val_fraction"], min_delta=t["min_delta"],
                           patience=t["patience"], gap_threshold=t["gap_threshold"],
                           window=t["window"], seed=self.seed)

    def to_toml(self) -> str:
        return tomli_w.dumps(_strip_none(self.raw))


def _strip_none(d: dict) -> dict:
    return {k: _strip_none(v) if isinstance(v, dict) else v for k, v in d.items() if v is not None}


def validate(raw: dict, base_dir: Path, need_data: bool = True) -> RunConfig:
    _num(raw, "run.seed", int, 0)
    if not isinstance(raw["run"]["output_dir"], str) or not raw["run"]["output_dir"]:
        raise ConfigError("run.output_dir", "expected a path")
    cfg = RunConfig(raw, base_dir)
    if need_data:
        if not raw["data"]["path"] or not isinstance(raw["data"]["path"], str):
            raise ConfigError("data.path", "is required")
        if not cfg.data_path.is_file():
            raise ConfigError("data.path", f"file not found: {cfg.data_path}")
        if cfg.x_cols is None:
            raise ConfigError("data.x_cols", "is required")
        if cfg.y_cols is None:
            raise ConfigError("data.y_cols", "is required")
    _num(raw, "data.test_fraction", float, 0.0, 1.0, lo_open=True, hi_open=True)

    _num(raw, "flow.n_steps", int, 2)
    _num(raw, "flow.t_min", float, 0.0, 0.5, lo_open=True, hi_open=True)
    _num(raw, "flow.batch_size", int, 0)
    _num(raw, "flow.n_labels", int, 1)
    _num(raw, "flow.loglik_cutoff", float, 0.0, lo_open=True, optional=True)
    _num(raw, "flow.chunk_size", int, 1)

    mode = raw["likelihood"]["mode"]
    if mode not in (EXPLICIT, KERNEL):
        raise ConfigError("likelihood.mode", f"must be {EXPLICIT!r} or {KERNEL!r}, got {mode!r}")
    if mode == EXPLICIT:
        _num(raw, "likelihood.sigma", float, 0.0, lo_open=True)
    else:
        bw = raw["likelihood"]["bandwidth"]
        if isinstance(bw, list):
            if not bw or not all(isinstance(b, (int, float)) and b > 0 for b in bw):
                raise ConfigError("likelihood.bandwidth", "entries must be > 0")
        else:
            _num(raw, "likelihood.bandwidth", float, 0.0, lo_open=True, optional=True)

    for f in ("search.widths", "search.depths", "search.batch_sizes"):
        _int_list(raw, f)
    lo = _num(raw, "search.lr_min", float, 0.0, lo_open=True)
    _num(raw, "search.lr_max", float, lo)
    lo = _num(raw, "search.dropout_min", float, 0.0, 0.5, hi_open=True)
    _num(raw, "search.dropout_max", float, lo, 0.5, hi_open=True)
    _num(raw, "search.n_trials", int, 1)
    _num(raw, "search.max_epochs", int, 1)

    _num(raw, "train.lr", float, 0.0, lo_open=True)
    _num(raw, "train.batch_size", int, 1)
    _num(raw, "train.max_epochs", int, 1)
    _num(raw, "train.val_fraction", float, 0.0, 0.5, lo_open=True, hi_open=True)
    _num(raw, "train.min_delta", float, 0.0)
    _num(raw, "train.patience", int, 1)
    _num(raw, "train.gap_threshold", float, 0.0)
    _num(raw, "train.window", int, 1)
    _num(raw, "train.hidden_layers", int, 1)
    _num(raw, "train.hidden_width", int, 1)
    _num(raw, "train.dropout_rate", float, 0.0, 0.5, hi_open=True)

    _num(raw, "eval.K", int, 1)
    ys = raw["eval"]["y_star"]
    if ys is not None:
        rows = ys if ys and isinstance(ys[0], list) else [ys]
        if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for r in rows for v in r):
            raise ConfigError("eval.y_star", "expected numbers or a list of number lists")
    return cfg


def load(path=None, overrides: list[str] = (), need_data: bool = True,
         defaults: dict | None = None) -> RunConfig:
    """Read, merge and validate a configuration file (``path`` may be None)."""
    file_values, base = {}, Path.cwd()
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError("config", f"file not found: {p}")
        try:
            file_values = tomli.loads(p.read_text())
        except (tomli.TOMLDecodeError, UnicodeDecodeError) as exc:
            raise ConfigError("config", f"cannot parse {p}: {exc}") from None
        base = p.resolve().parent
    raw = merge(defaults or DEFAULTS, file_values, overrides)
    return validate(raw, base, need_data)
