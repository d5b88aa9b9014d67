"""Hyperparameter spaces: definitions, validation, unit-cube mapping and Sobol sampling.

Unit-cube mapping per kind (``u`` in [0, 1]):

* float, linear: ``lo + u * (hi - lo)``
* float, log10:  ``10 ** (log10(lo) + u * (log10(hi) - log10(lo)))``
* int:           ``floor(lo + u * (hi - lo + 1))`` clamped to ``hi``
* categorical / boolean: ``choices[floor(u * n)]`` clamped to the last choice

Every hyperparameter owns one coordinate whether or not it is active, so a
Sobol point maps to the same values on the shared coordinates no matter which
conditional branches switch on.

YAML schema::

    name: my-space
    hyperparameters:
      - {name: lr, kind: float, lo: 1.0e-6, hi: 0.1, scale: log10, default: 3.0e-4}
      - {name: use_target, kind: boolean, default: true}
      - {name: interval, kind: int, lo: 1, hi: 2000, default: 500,
         condition: {parent: use_target, value: true}}
      - {name: batch, kind: categorical, choices: [32, 64, 128], default: 64}
    fixed: {n_envs: 8}
"""

from __future__ import annotations

import hashlib
import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import yaml
from scipy.stats import qmc

KINDS = ("float", "int", "categorical", "boolean")
MAX_SOBOL_DIM = 21201  # size of the bundled Joe-Kuo direction-number table


class SpaceError(ValueError):
    pass


@dataclass(frozen=True)
class HyperparameterDef:
    name: str
    kind: str
    lo: float | None = None
    hi: float | None = None
    scale: str = "linear"
    choices: tuple = ()
    condition: tuple[str, Any] | None = None  # (parent name, required parent value)
    default: Any = None

    def __post_init__(self):
        if not self.name.isidentifier():
            raise SpaceError(f"bad hyperparameter name {self.name!r}")
        if self.kind not in KINDS:
            raise SpaceError(f"{self.name}: unknown kind {self.kind!r}")
        if self.kind in ("float", "int"):
            if self.lo is None or self.hi is None or not self.lo < self.hi:
                raise SpaceError(f"{self.name}: need lo < hi")
            if self.scale not in ("linear", "log10"):
                raise SpaceError(f"{self.name}: unknown scale {self.scale!r}")
            if self.scale == "log10" and self.lo <= 0:
                raise SpaceError(f"{self.name}: log10 scale needs lo > 0")
        if self.kind == "boolean":
            object.__setattr__(self, "choices", (False, True))
        if self.kind == "categorical" and len(self.choices) < 1:
            raise SpaceError(f"{self.name}: categorical needs choices")
        if self.default is not None and not self.contains(self.default):
            raise SpaceError(f"{self.name}: default {self.default!r} out of range")

    def contains(self, value) -> bool:
        if self.kind == "float":
            return isinstance(value, (int, float)) and not isinstance(value, bool) and self.lo <= value <= self.hi
        if self.kind == "int":
            return isinstance(value, (int, np.integer)) and not isinstance(value, bool) and self.lo <= value <= self.hi
        if self.kind == "boolean":
            return isinstance(value, (bool, np.bool_))
        return value in self.choices

    def from_unit(self, u: float):
        if self.kind == "float":
            if self.scale == "log10":
                a, b = math.log10(self.lo), math.log10(self.hi)
                v = 10.0 ** (a + u * (b - a))
            else:
                v = self.lo + u * (self.hi - self.lo)
            return float(min(max(v, self.lo), self.hi))
        if self.kind == "int":
            lo, hi = int(self.lo), int(self.hi)
            return min(int(math.floor(lo + u * (hi - lo + 1))), hi)
        n = len(self.choices)
        return self.choices[min(int(math.floor(u * n)), n - 1)]

    def to_unit(self, value) -> float:
        if self.kind == "float":
            if self.scale == "log10":
                a, b = math.log10(self.lo), math.log10(self.hi)
                return (math.log10(value) - a) / (b - a)
            return (value - self.lo) / (self.hi - self.lo)
        if self.kind == "int":
            return (value - self.lo + 0.5) / (self.hi - self.lo + 1)
        return (self.choices.index(value) + 0.5) / len(self.choices)

    def to_dict(self) -> dict:
        d: dict[str, Any] = {"name": self.name, "kind": self.kind}
        if self.kind in ("float", "int"):
            d["lo"], d["hi"] = self.lo, self.hi
            if self.scale != "linear":
                d["scale"] = self.scale
        if self.kind == "categorical":
            d["choices"] = list(self.choices)
        if self.default is not None:
            d["default"] = self.default
        if self.condition is not None:
            d["condition"] = {"parent": self.condition[0], "value": self.condition[1]}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "HyperparameterDef":
        cond = d.get("condition")
        kind = d["kind"]
        lo, hi = d.get("lo"), d.get("hi")
        if kind == "int" and lo is not None:
            lo, hi = int(lo), int(hi)
        elif kind == "float" and lo is not None:
            lo, hi = float(lo), float(hi)
        default = d.get("default")
        if kind == "float" and default is not None:
            default = float(default)
        return cls(
            name=d["name"],
            kind=kind,
            lo=lo,
            hi=hi,
            scale=d.get("scale", "linear"),
            choices=tuple(d.get("choices", ())),
            condition=(cond["parent"], cond["value"]) if cond else None,
            default=default,
        )


@dataclass(frozen=True)
class Configuration:
    values: dict
    space_id: str = ""

    def __getitem__(self, key):
        return self.values[key]

    def __contains__(self, key):
        return key in self.values

    def get(self, key, default=None):
        return self.values.get(key, default)

    def replace(self, **changes) -> "Configuration":
        return Configuration({**self.values, **changes}, self.space_id)

    def as_dict(self) -> dict:
        return dict(self.values)

    def hash(self) -> str:
        return config_hash(self)


def config_hash(config: "Configuration | dict") -> str:
    """Short stable digest of the hyperparameter values (key order does not matter)."""
    values = config.values if isinstance(config, Configuration) else config
    canon = json.dumps({k: _plain(v) for k, v in sorted(values.items())}, sort_keys=True, separators=(",", ":"))
    return hashlib.blake2b(canon.encode(), digest_size=8).hexdigest()


def _plain(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, float):
        return repr(v)
    return v


@dataclass(frozen=True)
class ConfigurationSpace:
    name: str
    defs: tuple[HyperparameterDef, ...]
    fixed: dict = field(default_factory=dict)

    def __post_init__(self):
        names = [d.name for d in self.defs]
        if len(set(names)) != len(names):
            raise SpaceError("duplicate hyperparameter names")
        object.__setattr__(self, "defs", tuple(_topo_sort(self.defs)))

    @property
    def names(self) -> list[str]:
        return [d.name for d in self.defs]

    @property
    def dim(self) -> int:
        return len(self.defs)

    def __getitem__(self, name: str) -> HyperparameterDef:
        for d in self.defs:
            if d.name == name:
                return d
        raise KeyError(name)

    def active_names(self, values: dict) -> set[str]:
        """Active set given (possibly partial) values; a child is active only if its parent is."""
        active: set[str] = set()
        for d in self.defs:
            if d.condition is None:
                active.add(d.name)
            else:
                parent, required = d.condition
                if parent in active and parent in values and values[parent] == required:
                    active.add(d.name)
        return active

    def default(self) -> Configuration:
        full = {d.name: d.default for d in self.defs}
        if any(v is None for v in full.values()):
            raise SpaceError(f"space {self.name} has hyperparameters without defaults")
        active = self.active_names(full)
        return Configuration({k: v for k, v in full.items() if k in active}, self.name)

    def make(self, values: dict) -> Configuration:
        """Fill missing values from defaults, drop inactive ones, then validate."""
        full = {d.name: d.default for d in self.defs}
        full.update(values)
        active = self.active_names(full)
        cfg = Configuration({k: v for k, v in full.items() if k in active}, self.name)
        problems = validate(self, cfg)
        if problems:
            raise SpaceError("; ".join(problems))
        return cfg

    def to_dict(self) -> dict:
        return {"name": self.name, "hyperparameters": [d.to_dict() for d in self.defs], "fixed": dict(self.fixed)}

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    @classmethod
    def from_dict(cls, d: dict) -> "ConfigurationSpace":
        return cls(d["name"], tuple(HyperparameterDef.from_dict(h) for h in d["hyperparameters"]),
                   dict(d.get("fixed") or {}))

    @classmethod
    def from_yaml(cls, text: str) -> "ConfigurationSpace":
        return cls.from_dict(yaml.safe_load(text))


def _topo_sort(defs) -> list[HyperparameterDef]:
    by_name = {d.name: d for d in defs}
    for d in defs:
        if d.condition is not None and d.condition[0] not in by_name:
            raise SpaceError(f"{d.name}: condition parent {d.condition[0]!r} does not exist")
    out, done, visiting = [], set(), set()

    def visit(d):
        if d.name in done:
            return
        if d.name in visiting:
            raise SpaceError(f"cyclic condition through {d.name!r}")
        visiting.add(d.name)
        if d.condition is not None:
            visit(by_name[d.condition[0]])
        visiting.discard(d.name)
        done.add(d.name)
        out.append(d)

    for d in defs:
        visit(d)
    return out


def validate(space: ConfigurationSpace, config: Configuration | dict) -> list[str]:
    """Every violation found; an empty list means the configuration is valid."""
    values = config.values if isinstance(config, Configuration) else dict(config)
    problems = []
    known = set(space.names)
    for k in values:
        if k not in known:
            problems.append(f"{k}: unknown hyperparameter")
    active = space.active_names(values)
    for d in space.defs:
        if d.name in active and d.name not in values:
            problems.append(f"{d.name}: missing active hyperparameter")
        elif d.name not in active and d.name in values:
            problems.append(f"{d.name}: inactive hyperparameter set")
        elif d.name in values and not d.contains(values[d.name]):
            problems.append(f"{d.name}: value {values[d.name]!r} out of range")
    return problems


def to_unit(space: ConfigurationSpace, config: Configuration) -> np.ndarray:
    """Unit-cube coordinates; inactive coordinates are set to 0.5."""
    return np.array([d.to_unit(config[d.name]) if d.name in config else 0.5 for d in space.defs])


def from_unit(space: ConfigurationSpace, u) -> Configuration:
    u = np.asarray(u, dtype=np.float64)
    if u.shape != (space.dim,):
        raise SpaceError(f"expected {space.dim} coordinates, got shape {u.shape}")
    if np.any((u < 0) | (u > 1)) or not np.all(np.isfinite(u)):
        raise SpaceError("unit coordinates must lie in [0, 1]")
    full = {d.name: d.from_unit(float(x)) for d, x in zip(space.defs, u)}
    active = space.active_names(full)
    return Configuration({k: v for k, v in full.items() if k in active}, space.name)


def sobol_points(n: int, dim: int, seed: int = 0) -> np.ndarray:
    """First ``n`` points of the base-2 Sobol sequence, origin skipped.

    ``seed == 0`` gives the plain sequence; any other seed applies a random
    linear matrix scramble plus digital shift drawn from that seed.
    """
    if n < 1:
        raise SpaceError("n must be >= 1")
    if not 1 <= dim <= MAX_SOBOL_DIM:
        raise SpaceError(f"Sobol dimension {dim} unsupported; limit is {MAX_SOBOL_DIM}")
    if seed == 0:
        engine = qmc.Sobol(dim, scramble=False)
    else:
        engine = qmc.Sobol(dim, scramble=True, rng=np.random.Generator(np.random.PCG64(seed)))
    engine.fast_forward(1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")  # balance warning for non powers of two
        return engine.random(n)


def sobol_sample(space: ConfigurationSpace, n: int, seed: int = 0) -> list[Configuration]:
    return [from_unit(space, row) for row in sobol_points(n, space.dim, seed)]


def random_sample(space: ConfigurationSpace, n: int, rng: np.random.Generator) -> list[Configuration]:
    return [from_unit(space, rng.random(space.dim)) for _ in range(n)]


def buffer_size_clamp(space: ConfigurationSpace, config: Configuration, total_timesteps: int) -> Configuration:
    if total_timesteps < 1:
        raise SpaceError("total_timesteps must be >= 1")
    if "buffer_size" not in config:
        return config
    return config.replace(buffer_size=min(int(config["buffer_size"]), int(total_timesteps)))


# --- builtin spaces -------------------------------------------------------

DOMAINS = ("classic-control", "gridworld")

_BATCH = {
    ("ppo", "classic-control"): (128, 256, 512),
    ("ppo", "gridworld"): (32, 64, 128),
    ("dqn", "classic-control"): (64, 128, 256),
    ("dqn", "gridworld"): (32, 64, 128),
    ("sac", "classic-control"): (256, 512, 1024),
}

_FIXED = {
    ("ppo", "classic-control"): {"n_envs": 8, "n_steps": 32, "update_epochs": 4, "gamma": 0.99},
    ("ppo", "gridworld"): {"n_envs": 8, "n_steps": 32, "update_epochs": 10, "gamma": 0.99},
    ("dqn", "classic-control"): {"n_envs": 1, "gamma": 0.99, "train_frequency": 1, "gradient_steps": 1},
    ("dqn", "gridworld"): {"n_envs": 4, "gamma": 0.99, "train_frequency": 1, "gradient_steps": 1},
    ("sac", "classic-control"): {"n_envs": 1, "gamma": 0.99, "train_frequency": 1, "gradient_steps": 1},
}

# defaults for the shared rows of each algorithm; batch size defaults to the middle choice
_DEFAULTS = {
    "ppo": {"learning_rate": 3e-3, "ent_coef": 0.0, "gae_lambda": 0.9, "clip_eps": 0.2,
            "vf_clip_eps": 0.0, "normalize_advantages": True, "vf_coef": 0.5, "max_grad_norm": 0.5},
    "dqn": {"buffer_prio_sampling": False, "buffer_alpha": 0.6, "buffer_beta": 0.4, "buffer_epsilon": 1e-6,
            "buffer_size": 100_000, "initial_epsilon": 1.0, "target_epsilon": 0.05, "learning_rate": 1e-3,
            "learning_starts": 1000, "use_target_network": True, "target_update_interval": 250},
    "sac": {"buffer_prio_sampling": False, "buffer_alpha": 0.6, "buffer_beta": 0.4, "buffer_epsilon": 1e-6,
            "buffer_size": 1_000_000, "learning_rate": 1e-3, "learning_starts": 1000,
            "use_target_network": True, "tau": 0.01, "reward_scale": 1.0},
}


def _prio_rows(dflt):
    cond = ("buffer_prio_sampling", True)
    return [
        HyperparameterDef("buffer_prio_sampling", "boolean", default=dflt["buffer_prio_sampling"]),
        HyperparameterDef("buffer_alpha", "float", 0.01, 1.0, condition=cond, default=dflt["buffer_alpha"]),
        HyperparameterDef("buffer_beta", "float", 0.01, 1.0, condition=cond, default=dflt["buffer_beta"]),
        HyperparameterDef("buffer_epsilon", "float", 1e-7, 1e-3, "log10", condition=cond,
                          default=dflt["buffer_epsilon"]),
        HyperparameterDef("buffer_size", "int", 1024, 1_000_000, default=dflt["buffer_size"]),
    ]


def builtin_space(algorithm: str, domain: str) -> ConfigurationSpace:
    key = (algorithm, domain)
    if domain not in DOMAINS:
        raise SpaceError(f"unknown domain {domain!r}; expected one of {DOMAINS}")
    if key not in _BATCH:
        raise SpaceError(f"unsupported pairing {algorithm}/{domain}"
                         + ("; sac requires a continuous-action domain" if algorithm == "sac" else ""))
    dflt = _DEFAULTS[algorithm]
    batch = _BATCH[key]
    rows = [HyperparameterDef("batch_size", "categorical", choices=batch, default=batch[1])]
    if algorithm == "ppo":
        rows += [
            HyperparameterDef("learning_rate", "float", 1e-6, 1e-1, "log10", default=dflt["learning_rate"]),
            HyperparameterDef("ent_coef", "float", 0.0, 0.5, default=dflt["ent_coef"]),
            HyperparameterDef("gae_lambda", "float", 0.8, 0.9999, default=dflt["gae_lambda"]),
            HyperparameterDef("clip_eps", "float", 0.0, 0.5, default=dflt["clip_eps"]),
            HyperparameterDef("vf_clip_eps", "float", 0.0, 0.5, default=dflt["vf_clip_eps"]),
            HyperparameterDef("normalize_advantages", "boolean", default=dflt["normalize_advantages"]),
            HyperparameterDef("vf_coef", "float", 0.0, 1.0, default=dflt["vf_coef"]),
            HyperparameterDef("max_grad_norm", "float", 0.0, 1.0, default=dflt["max_grad_norm"]),
        ]
    elif algorithm == "dqn":
        rows += _prio_rows(dflt) + [
            HyperparameterDef("initial_epsilon", "float", 0.5, 1.0, default=dflt["initial_epsilon"]),
            HyperparameterDef("target_epsilon", "float", 0.001, 0.2, default=dflt["target_epsilon"]),
            HyperparameterDef("learning_rate", "float", 1e-6, 1e-1, "log10", default=dflt["learning_rate"]),
            HyperparameterDef("learning_starts", "int", 1, 2048, default=dflt["learning_starts"]),
            HyperparameterDef("use_target_network", "boolean", default=dflt["use_target_network"]),
            HyperparameterDef("target_update_interval", "int", 1, 2000, condition=("use_target_network", True),
                              default=dflt["target_update_interval"]),
        ]
    else:
        rows += _prio_rows(dflt) + [
            HyperparameterDef("learning_rate", "float", 1e-6, 1e-1, "log10", default=dflt["learning_rate"]),
            HyperparameterDef("learning_starts", "int", 1, 2048, default=dflt["learning_starts"]),
            HyperparameterDef("use_target_network", "boolean", default=dflt["use_target_network"]),
            HyperparameterDef("tau", "float", 0.01, 1.0, condition=("use_target_network", True),
                              default=dflt["tau"]),
            HyperparameterDef("reward_scale", "float", 0.1, 10.0, "log10", default=dflt["reward_scale"]),
        ]
    return ConfigurationSpace(f"{algorithm}-{domain}", tuple(rows), dict(_FIXED[key]))
