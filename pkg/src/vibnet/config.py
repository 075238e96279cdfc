"""Strict ``key = value`` run configuration with section headers.

Every key must be declared in :data:`SCHEMA`; unknown sections or keys are
rejected so a typo can never silently fall back to a default.
"""

import configparser
from dataclasses import dataclass, field, fields

from .errors import InputError
from .train import TrainConfig


class ConfigError(InputError):
    """Unknown or malformed configuration entry; ``key`` is ``section.name``."""

    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key


def _bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _ints(text):
    return [int(p) for p in text.replace(",", "-").split("-") if p.strip()]


def _floats(text):
    return [float(p) for p in text.split(",") if p.strip()]


_TRAIN_TYPES = {f.name: f.type for f in fields(TrainConfig)}
_CAST = {"float": float, "int": int, "str": str, float: float, int: int, str: str}

SCHEMA = {
    "model": {
        "architecture": str,
        "widths": _ints,
        "input_gate": _bool,
        "batch_norm": _bool,
        "depth_includes_input": _bool,
    },
    "train": dict({k: _CAST[t] for k, t in _TRAIN_TYPES.items()},
                  fine_tune_epochs=int, fine_tune_lr=float, checkpoint_every=int),
    "prune": {"tau": float, "fold": _bool},
    "data": {
        "dataset": str,
        "dir": str,
        "train_subset": int,
        "test_subset": int,
        "blobs_n": int,
        "blobs_classes": int,
        "blobs_dim": int,
        "blobs_separation": float,
    },
    "output": {"dir": str},
    "analysis": {
        "mi_track": _bool,
        "mi_samples": int,
        "mi_k": int,
        "mi_layer": int,
        "penalty_mu_min": float,
        "penalty_mu_max": float,
        "penalty_points": int,
        "penalty_omegas": _floats,
        "surrogate_problems": int,
        "surrogate_dim": int,
        "surrogate_rank": int,
        "surrogate_gamma": float,
        "surrogate_restarts": int,
    },
}


@dataclass
class RunConfig:
    architecture: str = "lenet_300_100"
    widths: list = field(default_factory=lambda: [4, 8, 6, 3])
    input_gate: bool = True
    batch_norm: bool = True
    depth_includes_input: bool = False
    train: TrainConfig = field(default_factory=TrainConfig)
    fine_tune_epochs: int = 0
    fine_tune_lr: float = 1e-4
    checkpoint_every: int = 0
    tau: float = 1e-2
    fold: bool = False
    dataset: str = "mnist"
    data_dir: str = None
    train_subset: int = 0
    test_subset: int = 0
    blobs_n: int = 2000
    blobs_classes: int = 4
    blobs_dim: int = 8
    blobs_separation: float = 6.0
    out_dir: str = "."
    mi_track: bool = False
    mi_samples: int = 1000
    mi_k: int = 5
    mi_layer: int = 1
    penalty_mu_min: float = -3.0
    penalty_mu_max: float = 3.0
    penalty_points: int = 61
    penalty_omegas: list = field(default_factory=lambda: [0.01, 0.1, 1.0, 10.0])
    surrogate_problems: int = 5
    surrogate_dim: int = 30
    surrogate_rank: int = 5
    surrogate_gamma: float = 0.1
    surrogate_restarts: int = 20


_RENAME = {("data", "dir"): "data_dir", ("output", "dir"): "out_dir"}


def parse_config(text):
    """Parse config text into a :class:`RunConfig` (strict)."""
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",),
                                       comment_prefixes=("#", ";"), inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError("<file>", str(exc).splitlines()[0]) from exc
    cfg = RunConfig()
    train_kw = {}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(section, "unknown section")
        for key, raw in parser.items(section):
            name = f"{section}.{key}"
            if key not in SCHEMA[section]:
                raise ConfigError(name, "unknown key")
            try:
                value = SCHEMA[section][key](raw.strip())
            except ValueError as exc:
                raise ConfigError(name, f"bad value {raw!r} ({exc})") from exc
            if section == "train" and key in _TRAIN_TYPES:
                train_kw[key] = value
            else:
                setattr(cfg, _RENAME.get((section, key), key), value)
    try:
        cfg.train = TrainConfig(**train_kw)
    except InputError as exc:
        raise ConfigError("train", str(exc)) from exc
    if not cfg.tau > 0:
        raise ConfigError("prune.tau", "must be positive")
    if cfg.dataset not in ("mnist", "blobs"):
        raise ConfigError("data.dataset", f"unknown dataset {cfg.dataset!r}")
    return cfg


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
