"""Run configuration: JSON file + command-line overrides -> validated RunConfig.

A config file is a JSON object with up to three sections (``problem``,
``training``, ``fdm``) plus the top-level keys ``seed``, ``out_dir``,
``workers`` and ``deterministic``.  Every key is optional except
``problem.kind``; missing values fall back to the benchmark's published
settings (network size, epoch counts, collocation budget, domains, grid
resolution).  Unknown keys are rejected by name rather than ignored, so a
typo cannot silently run with defaults.  Command-line overrides are applied
after the file and therefore win.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .fdm import FDMConfig
from .policy_iteration import MinimaxConfig, PITrainConfig
from .problems import Box, PathPlanningProblem, ProblemDefinition, PubSubProblem


class ConfigError(ValueError):
    """Malformed, contradictory, or unknown configuration input."""


_TOP_KEYS = {"problem", "training", "fdm", "seed", "out_dir", "workers",
             "deterministic"}

_PROBLEM_KEYS = {
    "path_planning": {"kind", "lam1", "lam2", "lam3", "delta", "eps", "goal",
                      "noise_scale", "horizon"},
    "pub_sub": {"kind", "n_agents", "a_coef", "b_coef", "c_coef", "alpha",
                "beta", "radius", "noise_scale", "eps_aniso", "sigma_seed",
                "horizon"},
}

_TRAINING_KEYS = {"epochs", "max_updates", "n_interior", "domain",
                  "target_domain", "resample_interval", "tolerance",
                  "learning_rate", "n_validation", "residual_samples",
                  "hidden", "dtype", "selector", "minimax",
                  "keep_checkpoints", "terminal_mode", "n_terminal",
                  "terminal_weight"}

_MINIMAX_KEYS = {"step_size", "max_iterations", "tolerance", "fd_step"}

_FDM_KEYS = {"extended", "target", "n_points", "time_steps", "store_times",
             "store_every", "blowup_factor", "check_every"}


def _reject_unknown(section: dict, allowed: set, where: str) -> None:
    for key in section:
        if key not in allowed:
            raise ConfigError(f"unknown key '{key}' in {where}")


def _box_from_entry(entry, dim: int, where: str) -> Box:
    """A box is either [lo, hi] (cube over the problem dimension) or
    {"lower": [...], "upper": [...]} with explicit per-axis bounds."""
    if isinstance(entry, Box):
        return entry
    if isinstance(entry, dict):
        _reject_unknown(entry, {"lower", "upper"}, where)
        if "lower" not in entry or "upper" not in entry:
            raise ConfigError(f"{where} needs both 'lower' and 'upper'")
        box = Box(np.asarray(entry["lower"], float),
                  np.asarray(entry["upper"], float))
        if box.dim != dim:
            raise ConfigError(f"{where} has dimension {box.dim}, "
                              f"problem has {dim}")
        return box
    if isinstance(entry, (list, tuple)) and len(entry) == 2 \
            and all(isinstance(v, (int, float)) for v in entry):
        return Box.cube(dim, float(entry[0]), float(entry[1]))
    raise ConfigError(f"{where} must be [lo, hi] or "
                      "{'lower': [...], 'upper': [...]}")


def _benchmark_defaults(kind: str, dim: int) -> tuple[dict, dict]:
    """(training defaults, fdm defaults) for a benchmark kind."""
    if kind == "path_planning":
        training = {
            "epochs": 1000, "max_updates": 1000, "n_interior": 2000,
            "hidden": (64, 64, 64, 64),
            "domain": Box.cube(2, -1.0, 1.0),
            "target_domain": Box.cube(2, -1.0, 1.0),
        }
        fdm = {
            "extended": Box.cube(2, -2.0, 2.0),
            "target": Box.cube(2, -1.0, 1.0),
            "n_points": 201, "time_steps": 201 ** 2,
        }
    else:
        training = {
            "epochs": 5000, "max_updates": 500, "n_interior": dim * 1000,
            "hidden": (64, 64, 64),
            "domain": Box.cube(dim, -1.5, 1.5),
            "target_domain": Box.cube(dim, -0.5, 0.5),
        }
        fdm = {
            "extended": Box.cube(dim, -1.5, 1.5),
            "target": Box.cube(dim, -0.5, 0.5),
            "n_points": 151, "time_steps": 151 ** 2,
        }
    return training, fdm


@dataclass
class RunConfig:
    """Fully resolved run settings; builders hand out the typed objects."""

    problem: dict[str, Any]
    training: dict[str, Any]
    fdm: dict[str, Any]
    seed: int = 0
    out_dir: str = "out"
    workers: int = 1
    deterministic: bool = True

    def build_problem(self) -> ProblemDefinition:
        spec = dict(self.problem)
        kind = spec.pop("kind")
        if kind == "path_planning":
            if "goal" in spec:
                spec["goal"] = tuple(float(v) for v in spec["goal"])
            return PathPlanningProblem(**spec)
        return PubSubProblem(**spec)

    def build_train_config(self) -> PITrainConfig:
        cfg = dict(self.training)
        cfg["hidden"] = tuple(int(v) for v in cfg["hidden"])
        if "minimax" in cfg:
            cfg["minimax"] = MinimaxConfig(**cfg["minimax"])
        return PITrainConfig(seed=self.seed, **cfg)

    def build_fdm_config(self) -> FDMConfig:
        return FDMConfig(**self.fdm)

    def resolved(self) -> dict[str, Any]:
        """JSON-ready echo of every setting (boxes as lower/upper lists)."""

        def encode(value):
            if isinstance(value, Box):
                return {"lower": [float(v) for v in value.lower],
                        "upper": [float(v) for v in value.upper]}
            if isinstance(value, tuple):
                return list(value)
            if isinstance(value, dict):
                return {k: encode(v) for k, v in value.items()}
            return value

        return {
            "problem": encode(self.problem),
            "training": encode(self.training),
            "fdm": encode(self.fdm),
            "seed": self.seed,
            "out_dir": self.out_dir,
            "workers": self.workers,
            "deterministic": self.deterministic,
        }


def parse_config(file_path: str | None = None,
                 overrides: dict[str, Any] | None = None) -> RunConfig:
    """Merge defaults <- config file <- overrides into a RunConfig.

    ``overrides`` uses dotted keys (``training.epochs``, ``problem.kind``,
    ``seed``) as produced by the CLI's ``--set``/flag layer; they are applied
    after the file so a flag always wins.
    """
    raw: dict[str, Any] = {}
    if file_path is not None:
        try:
            with open(file_path) as fh:
                raw = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {file_path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config file must contain a JSON object")

    _reject_unknown(raw, _TOP_KEYS, "config")
    merged = {
        "problem": dict(raw.get("problem", {})),
        "training": dict(raw.get("training", {})),
        "fdm": dict(raw.get("fdm", {})),
        "seed": raw.get("seed", 0),
        "out_dir": raw.get("out_dir", "out"),
        "workers": raw.get("workers", 1),
        "deterministic": raw.get("deterministic", True),
    }
    if "minimax" in merged["training"]:
        merged["training"]["minimax"] = dict(merged["training"]["minimax"])

    for dotted, value in (overrides or {}).items():
        parts = dotted.split(".")
        if parts[0] not in _TOP_KEYS:
            raise ConfigError(f"unknown key '{parts[0]}' in overrides")
        node = merged
        for part in parts[:-1]:
            nxt = node.get(part)
            if not isinstance(nxt, dict):
                nxt = {}
                node[part] = nxt
            node = nxt
        node[parts[-1]] = value

    problem = merged["problem"]
    kind = problem.get("kind")
    if kind is None:
        raise ConfigError("config is missing required key 'problem.kind'")
    if kind not in _PROBLEM_KEYS:
        raise ConfigError(f"unknown problem kind '{kind}' "
                          f"(expected one of {sorted(_PROBLEM_KEYS)})")
    _reject_unknown(problem, _PROBLEM_KEYS[kind], "problem section")
    if kind == "pub_sub":
        problem.setdefault("n_agents", 5)
        problem["n_agents"] = int(problem["n_agents"])
        dim = problem["n_agents"]
    else:
        dim = 2

    training = merged["training"]
    _reject_unknown(training, _TRAINING_KEYS, "training section")
    if "minimax" in training:
        _reject_unknown(training["minimax"], _MINIMAX_KEYS,
                        "training.minimax section")
    train_defaults, fdm_defaults = _benchmark_defaults(kind, dim)
    for key, value in train_defaults.items():
        training.setdefault(key, value)
    for box_key in ("domain", "target_domain"):
        training[box_key] = _box_from_entry(training[box_key], dim,
                                            f"training.{box_key}")
    if isinstance(training["hidden"], (list, tuple)):
        training["hidden"] = tuple(int(v) for v in training["hidden"])
    else:
        raise ConfigError("training.hidden must be a list of layer widths")

    fdm = merged["fdm"]
    _reject_unknown(fdm, _FDM_KEYS, "fdm section")
    for key, value in fdm_defaults.items():
        fdm.setdefault(key, value)
    fdm["extended"] = _box_from_entry(fdm["extended"], dim, "fdm.extended")
    if fdm.get("target") is not None:
        fdm["target"] = _box_from_entry(fdm["target"], dim, "fdm.target")

    for key, kind_fn, label in (("seed", int, "seed"),
                                ("workers", int, "workers")):
        try:
            merged[key] = kind_fn(merged[key])
        except (TypeError, ValueError):
            raise ConfigError(f"'{label}' must be an integer") from None
    if not isinstance(merged["deterministic"], bool):
        raise ConfigError("'deterministic' must be true or false")
    if not isinstance(merged["out_dir"], str):
        raise ConfigError("'out_dir' must be a string")

    cfg = RunConfig(problem=problem, training=training, fdm=fdm,
                    seed=merged["seed"], out_dir=merged["out_dir"],
                    workers=merged["workers"],
                    deterministic=merged["deterministic"])
    try:
        cfg.build_problem()
        cfg.build_train_config()
        cfg.build_fdm_config()
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid configuration value: {exc}") from None
    return cfg
