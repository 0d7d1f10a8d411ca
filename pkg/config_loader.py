import configparser
import json
import logging
import os
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Dict, Mapping, Optional, Tuple

import numpy as np

from game_core import MarkovGame, PolicyPair, StagePolicy, check_pair, game_from_dict, game_to_dict

EXPERIMENTS = ("lowerbound-bc", "gridworld-compare", "coverage-audit", "formula-suite")
ALGORITHMS = ("bc", "mail-warm", "murmail")
ENV_KINDS = ("lowerbound", "lowerbound-simplified", "gridworld", "random")

LOG_LEVELS = {"DEBUG": logging.DEBUG, "INFO": logging.INFO, "WARNING": logging.WARNING, "ERROR": logging.ERROR}


@dataclass(frozen=True)
class Settings:
    logfile: str = "mailbench.log"
    log_level: int = logging.INFO
    workers: int = 1
    output_dir: str = "results"


def load_settings(path: str = "config.ini") -> Settings:
    """Load tool settings from an ini file.

    Expects a [mailbench] section; every key is optional: logfile, log_level
    (DEBUG/INFO/WARNING/ERROR), workers and output_dir.

    Args:
        path: path to the config.ini file.

    Returns:
        A Settings instance.

    Raises:
        FileNotFoundError: if the file does not exist.
        KeyError: if the [mailbench] section is missing.
        ValueError: if workers is not a positive integer or log_level is unknown.
    """
    parser = configparser.ConfigParser()
    read = parser.read(path, encoding="utf-8")
    if not read:
        raise FileNotFoundError(f"Config file not found: {path}")

    if "mailbench" not in parser:
        raise KeyError("Missing [mailbench] section in config file")

    cfg = parser["mailbench"]
    level_name = cfg.get("log_level", "INFO").strip().upper()
    if level_name not in LOG_LEVELS:
        raise ValueError(f"Unknown log_level {level_name!r}; expected one of {sorted(LOG_LEVELS)}")
    try:
        workers = cfg.getint("workers", fallback=1)
    except ValueError:
        raise ValueError(f"workers must be an integer, got {cfg.get('workers')!r}") from None
    if workers < 1:
        raise ValueError(f"workers must be at least 1, got {workers}")

    return Settings(logfile=cfg.get("logfile", "mailbench.log"), log_level=LOG_LEVELS[level_name],
                    workers=workers, output_dir=cfg.get("output_dir", "results"))


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment run: environments x algorithms x seeds, evaluated at query checkpoints.

    `envs` and `algorithms` are lists of parameter dicts, each with a unique "name"; envs
    also carry a "kind" from ENV_KINDS and algorithms a name from ALGORITHMS.
    """

    experiment: str
    envs: Tuple[Dict[str, Any], ...] = ()
    algorithms: Tuple[Dict[str, Any], ...] = ()
    checkpoints: Tuple[int, ...] = ()
    n_seeds: int = 10
    seed: int = 0
    output_dir: str = "results"
    record_wall_time: bool = False
    count_warmup_queries: bool = False
    workers: Optional[int] = None
    delta: float = 0.05
    extra: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"Unknown experiment {self.experiment!r}; expected one of {EXPERIMENTS}")
        if self.n_seeds < 1:
            raise ValueError(f"n_seeds must be at least 1, got {self.n_seeds}")
        cps = tuple(int(c) for c in self.checkpoints)
        if any(c < 1 for c in cps) or any(b <= a for a, b in zip(cps, cps[1:])):
            raise ValueError(f"checkpoints must be positive and strictly increasing, got {list(cps)}")
        object.__setattr__(self, "checkpoints", cps)
        if self.experiment in ("lowerbound-bc", "gridworld-compare") and not cps:
            raise ValueError(f"experiment {self.experiment} needs at least one checkpoint")
        if self.experiment != "formula-suite" and not self.envs:
            raise ValueError(f"experiment {self.experiment} needs at least one env")
        if self.workers is not None and self.workers < 1:
            raise ValueError(f"workers must be at least 1, got {self.workers}")
        if not 0.0 < self.delta <= 1.0:
            raise ValueError(f"delta must lie in (0, 1], got {self.delta}")
        object.__setattr__(self, "envs", tuple(_check_entry(e, "env", ENV_KINDS, "kind") for e in self.envs))
        object.__setattr__(self, "algorithms",
                           tuple(_check_entry(a, "algorithm", ALGORITHMS, "name") for a in self.algorithms))
        for label, entries in (("env", self.envs), ("algorithm", self.algorithms)):
            names = [e["name"] for e in entries]
            if len(set(names)) != len(names):
                raise ValueError(f"duplicate {label} names: {names}")

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["envs"] = [dict(e) for e in self.envs]
        data["algorithms"] = [dict(a) for a in self.algorithms]
        data["checkpoints"] = list(self.checkpoints)
        return data


def _check_entry(entry: Mapping[str, Any], label: str, allowed: Tuple[str, ...], key: str) -> Dict[str, Any]:
    if not isinstance(entry, Mapping):
        raise ValueError(f"{label} entries must be objects, got {entry!r}")
    entry = dict(entry)
    if "name" not in entry:
        raise KeyError(f"Missing name in {label} entry {entry}")
    if key not in entry:
        raise KeyError(f"Missing {key} in {label} entry {entry['name']!r}")
    if entry[key] not in allowed:
        raise ValueError(f"Unknown {label} {key} {entry[key]!r}; expected one of {allowed}")
    return entry


def read_json(path: str) -> Any:
    if not os.path.exists(path):
        raise FileNotFoundError(f"File not found: {path}")
    with open(path, encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"Invalid JSON in {path}: {exc}") from None


def write_json(path: str, data: Any) -> None:
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")


CONFIG_KEYS = {"experiment", "envs", "algorithms", "checkpoints", "n_seeds", "seed", "output_dir",
               "record_wall_time", "count_warmup_queries", "workers", "delta"}


def load_experiment_config(path: str, overrides: Optional[Mapping[str, Any]] = None,
                           defaults: Optional[Mapping[str, Any]] = None) -> ExperimentConfig:
    """Load a JSON experiment config and apply command-line overrides.

    Args:
        path: JSON file with at least an "experiment" key.
        overrides: optional seed, output_dir, n_seeds, checkpoints; None values are ignored.
        defaults: values used for keys the file leaves out (the CLI passes the settings output_dir).

    Returns:
        A validated ExperimentConfig.

    Raises:
        FileNotFoundError: if the file does not exist.
        KeyError: if "experiment" is missing.
        ValueError: on unknown experiment ids or invalid values.
    """
    data = read_json(path)
    if not isinstance(data, dict):
        raise ValueError(f"Experiment config {path} must be a JSON object")
    if "experiment" not in data:
        raise KeyError(f"Missing experiment in {path}")
    known = {k: v for k, v in {**(defaults or {}), **data}.items() if k in CONFIG_KEYS}
    extra = {k: v for k, v in data.items() if k not in CONFIG_KEYS}
    cfg = ExperimentConfig(**{**known, "envs": tuple(known.get("envs", ())),
                              "algorithms": tuple(known.get("algorithms", ())),
                              "checkpoints": tuple(known.get("checkpoints", ()))}, extra=extra)
    if overrides:
        changes = {k: v for k, v in overrides.items() if v is not None}
        if "checkpoints" in changes:
            changes["checkpoints"] = tuple(changes["checkpoints"])
        cfg = replace(cfg, **changes)
    return cfg


def load_game_file(path: str) -> MarkovGame:
    """Read a game JSON file; every MarkovGame invariant is validated."""
    return game_from_dict(read_json(path))


def save_game_file(game: MarkovGame, path: str) -> None:
    write_json(path, game_to_dict(game))


def load_experts_file(path: str, game: MarkovGame) -> PolicyPair:
    """Read {"mu": [h][s][a], "nu": [h][s][b]} and check it against `game`."""
    data = read_json(path)
    for key in ("mu", "nu"):
        if key not in data:
            raise KeyError(f"Missing {key} in {path}")
    pair = PolicyPair(StagePolicy(np.asarray(data["mu"], dtype=float)),
                      StagePolicy(np.asarray(data["nu"], dtype=float)))
    check_pair(game, pair)
    return pair


def save_experts_file(pair: PolicyPair, path: str) -> None:
    write_json(path, {"mu": pair.mu.probs.tolist(), "nu": pair.nu.probs.tolist()})


def load_rho_file(path: str) -> np.ndarray:
    """Read a per-stage state distribution, either [h][s] or {"rho": [h][s]}."""
    data = read_json(path)
    if isinstance(data, dict):
        if "rho" not in data:
            raise KeyError(f"Missing rho in {path}")
        data = data["rho"]
    rho = np.asarray(data, dtype=float)
    if rho.ndim != 2:
        raise ValueError(f"rho must be a [stage][state] table, got {rho.ndim} dimensions")
    return rho
