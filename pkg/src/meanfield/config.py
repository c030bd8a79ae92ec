"""Run configuration files.

Configs are TOML with three sections::

    [model]
    name = "sis"          # "sis" | "wlan" | "custom"
    tau = 2.0
    rho = 1.0

    [command]
    name = "simulate"
    seed = 42
    N = 1000
    T = 10.0
    init = [0.7, 0.3]

    [output]
    dir = "results"

Model parameters: ``sis`` takes ``tau`` and ``rho``; ``wlan`` takes either
``c = [...]`` or ``c0`` and ``K`` (doubling back-off); ``custom`` takes
``states = [...]`` and an ``[[model.edges]]`` table (see
:func:`meanfield.model.custom_model`). Every command requires ``seed``.
Unknown keys anywhere are errors. A ``[manifest]`` section, as written next
to every run's outputs, is accepted and ignored, so a manifest is itself a
valid config.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

import numpy as np

from .errors import ValidationError
from .model import MeanFieldModel, custom_model, sis_model, wlan_model

COMMANDS = (
    "simulate", "integrate", "fixed-points", "wlan-gamma", "cross-check",
    "lln", "decoupling", "level4", "limit-cycle",
)

# Allowed command keys and their defaults (None = required, ... = optional, no default).
COMMAND_KEYS: dict[str, dict] = {
    "simulate": {"N": None, "T": None, "init": None, "tagged": [], "max_jumps": 10**7, "grid_points": 1001},
    "integrate": {"T": None, "init": None, "atol": 1e-10, "rtol": 1e-8, "max_step": ...},
    "fixed-points": {"n_starts": 64, "tol": 1e-10},
    "wlan-gamma": {"tol": 1e-10},
    "cross-check": {"tol": 1e-6, "n_starts": 8, "c0_list": [], "K_list": []},
    "lln": {"T": None, "init": None, "N_list": None, "replicas": 100, "grid_points": 50,
            "threshold": 0.05, "ratio_threshold": 3.0},
    "decoupling": {"T": None, "init": None, "N_list": None, "replicas": 2000, "threshold": 0.05},
    "level4": {"T": None, "init": None, "replicas": 2000, "grid_points": 50, "threshold": 0.05},
    "limit-cycle": {"T_max": 500.0, "init": [], "n_random_starts": 0, "transient_fraction": 0.5,
                    "point_tol": 1e-7, "cycle_tol": 1e-5},
}
MODEL_KEYS = {
    "sis": {"tau", "rho"},
    "wlan": {"c", "c0", "K"},
    "custom": {"states", "edges"},
}
MAX_SEED = 2**64 - 1


@dataclass
class RunConfig:
    model: dict
    command: str
    params: dict
    seed: int
    output_dir: str = "results"

    def to_dict(self) -> dict:
        return {
            "model": dict(self.model),
            "command": {"name": self.command, "seed": self.seed, **self.params},
            "output": {"dir": self.output_dir},
        }


def _check_keys(section: str, got, allowed):
    unknown = sorted(set(got) - set(allowed))
    if unknown:
        raise ValidationError(f"unknown key {unknown[0]!r} in [{section}]")


def _seed(value) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or not 0 <= value <= MAX_SEED:
        raise ValidationError(f"seed must be an unsigned 64-bit integer, got {value!r}")
    return value


def parse_config(text: str) -> RunConfig:
    """Parse and validate a TOML run configuration."""
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ValidationError(f"config syntax error: {exc}") from None
    _check_keys("top level", data, {"model", "command", "output", "manifest"})
    for name in ("model", "command"):
        if name not in data:
            raise ValidationError(f"missing [{name}] section")

    model = dict(data["model"])
    kind = model.get("name")
    if kind not in MODEL_KEYS:
        raise ValidationError(f"model name must be one of {sorted(MODEL_KEYS)}, got {kind!r}")
    _check_keys("model", set(model) - {"name"}, MODEL_KEYS[kind])

    cmd = dict(data["command"])
    name = cmd.pop("name", None)
    if name not in COMMANDS:
        raise ValidationError(f"command name must be one of {COMMANDS}, got {name!r}")
    if "seed" not in cmd:
        raise ValidationError("seed required")
    seed = _seed(cmd.pop("seed"))
    allowed = COMMAND_KEYS[name]
    _check_keys("command", cmd, allowed)
    params = {}
    for key, default in allowed.items():
        if key in cmd:
            params[key] = cmd[key]
        elif default is None:
            raise ValidationError(f"command {name!r} requires key {key!r}")
        elif default is not ...:
            params[key] = default

    output = dict(data.get("output", {}))
    _check_keys("output", output, {"dir"})
    cfg = RunConfig(model, name, params, seed, str(output.get("dir", "results")))
    _validate(cfg)
    return cfg


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def _validate(cfg: RunConfig):
    p = cfg.params
    build_model(cfg.model)
    for key in ("N", "replicas", "n_starts", "grid_points", "max_jumps", "n_random_starts"):
        if key in p and (not isinstance(p[key], int) or isinstance(p[key], bool) or p[key] < 0):
            raise ValidationError(f"{key} must be a nonnegative integer, got {p[key]!r}")
    for key in ("T", "T_max", "tol", "atol", "rtol", "max_step", "threshold", "ratio_threshold",
                "point_tol", "cycle_tol"):
        if key in p and not (isinstance(p[key], (int, float)) and math.isfinite(p[key]) and p[key] > 0):
            raise ValidationError(f"{key} must be a positive number, got {p[key]!r}")
    if p.get("N", 1) < 1:
        raise ValidationError("N must be >= 1")
    if cfg.command == "lln" and p["replicas"] < 30:
        raise ValidationError(f"lln needs replicas >= 30, got {p['replicas']}")
    if cfg.command in ("decoupling", "level4") and p["replicas"] < 500:
        raise ValidationError(f"{cfg.command} needs replicas >= 500, got {p['replicas']}")
    if "N_list" in p:
        ns = p["N_list"]
        if not ns or not all(isinstance(n, int) and n >= 1 for n in ns):
            raise ValidationError("N_list must be a non-empty list of positive integers")
        if any(b <= a for a, b in zip(ns, ns[1:])):
            raise ValidationError("N_list must be strictly increasing")
    if cfg.command in ("wlan-gamma", "cross-check") and cfg.model["name"] != "wlan":
        raise ValidationError(f"{cfg.command} requires the wlan model")


def build_model(section: dict) -> MeanFieldModel:
    kind = section["name"]
    try:
        if kind == "sis":
            return sis_model(float(section["tau"]), float(section["rho"]))
        if kind == "wlan":
            return wlan_model(wlan_rates(section))
        return custom_model(section["states"], section.get("edges", []))
    except KeyError as exc:
        raise ValidationError(f"model {kind!r} missing parameter {exc.args[0]!r}") from None
    except TypeError as exc:
        raise ValidationError(f"bad model parameters: {exc}") from None


def wlan_rates(section: dict) -> list[float]:
    if "c" in section:
        if "c0" in section or "K" in section:
            raise ValidationError("give either c or (c0, K) for the wlan model, not both")
        return [float(x) for x in section["c"]]
    c0, K = float(section["c0"]), int(section["K"])
    return [c0 / 2**i for i in range(K + 1)]


def initial_condition(model: MeanFieldModel, value, N: int | None = None):
    """Probability vector, or integer counts when ``value`` is a list of ints summing to N."""
    if isinstance(value, dict):
        return model.point(value)
    arr = np.asarray(value)
    if N is not None and np.issubdtype(arr.dtype, np.integer) and arr.sum() == N and N > 1:
        return arr.astype(np.int64)
    return model.point(arr.astype(float))
