"""PPO, DQN and SAC behind one ``init`` / ``train`` / ``evaluate`` interface.

Step accounting: ``train(state, n)`` runs ``ceil(n / n_envs)`` vector steps,
each consuming ``n_envs`` environment steps, so a request smaller than
``n_envs`` still consumes one full vector step.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .. import config_space as cs
from ..envs import get_spec, make, make_from_seeds
from ..seeding import derive_seed, make_rng
from . import dqn, ppo, sac
from .checkpoint import CheckpointError, load_tree, save_tree
from .common import (ALGORITHMS, AlgorithmError, Metrics, TrainingDiverged, TrainingState, epsilon_schedule,
                     gae, polyak)

__all__ = [
    "ALGORITHMS", "AlgorithmError", "CheckpointError", "Metrics", "TrainingDiverged", "TrainingState",
    "apply_config", "default_config", "epsilon_schedule", "evaluate", "gae", "init", "load_checkpoint",
    "polyak", "save_checkpoint", "space_for", "train",
]

_MODULES = {"ppo": ppo, "dqn": dqn, "sac": sac}

# hyperparameters whose change would alter network or buffer structure mid-run
STRUCTURAL = ("buffer_prio_sampling", "use_target_network")


def space_for(algorithm: str, env_name: str) -> cs.ConfigurationSpace:
    spec = get_spec(env_name)
    if algorithm not in ALGORITHMS:
        raise AlgorithmError(f"unknown algorithm {algorithm!r}; expected one of {ALGORITHMS}")
    if algorithm == "dqn" and not spec.action_space.is_discrete:
        raise AlgorithmError("dqn requires discrete actions")
    if algorithm == "sac" and spec.action_space.is_discrete:
        raise AlgorithmError("sac requires continuous actions")
    return cs.builtin_space(algorithm, spec.domain)


def default_config(algorithm: str, env_name: str) -> cs.Configuration:
    return space_for(algorithm, env_name).default()


def init(algorithm: str, config: cs.Configuration | dict | None, env_name: str, seed: int,
         total_timesteps: int | None = None) -> TrainingState:
    """Fresh training state; deterministic in (algorithm, config, env, seed, total_timesteps)."""
    space = space_for(algorithm, env_name)
    spec = get_spec(env_name)
    if config is None:
        config = space.default()
    elif isinstance(config, dict):
        config = space.make(config)
    problems = cs.validate(space, config)
    if problems:
        raise AlgorithmError("invalid configuration: " + "; ".join(problems))
    total = int(total_timesteps or spec.timesteps_for(algorithm))
    config = cs.buffer_size_clamp(space, config, total)
    fixed = dict(space.fixed)
    env = make(spec.name, int(fixed["n_envs"]), derive_seed(seed, "train-env"))
    state = TrainingState(
        algorithm=algorithm,
        env_name=spec.name,
        seed=int(seed),
        config=config,
        fixed=fixed,
        total_timesteps=total,
        env=env,
        nets={},
        opts={},
        rngs={k: make_rng(seed, algorithm, k) for k in ("action", "update", "buffer")},
        running_return=np.zeros(env.n_envs),
    )
    _MODULES[algorithm].setup(state, make_rng(seed, algorithm, "init"))
    return state


def train(state: TrainingState, n_steps: int) -> tuple[TrainingState, Metrics]:
    """Advance training by (at least) ``n_steps`` environment steps, mutating ``state`` in place."""
    if n_steps < 1:
        raise AlgorithmError("n_steps must be >= 1")
    metrics = Metrics()
    start = state.step
    n_vec = math.ceil(n_steps / state.n_envs)
    with np.errstate(over="ignore", invalid="ignore"):
        try:
            _MODULES[state.algorithm].train(state, n_vec, metrics)
        except FloatingPointError as e:
            raise TrainingDiverged(str(e), metrics) from e
    metrics.steps = state.step - start
    return state, metrics


def apply_config(state: TrainingState, config: cs.Configuration | dict) -> TrainingState:
    """Swap in new hyperparameters mid-run (learning rates, buffer settings, coefficients)."""
    space = space_for(state.algorithm, state.env_name)
    if isinstance(config, dict):
        config = space.make(config)
    problems = cs.validate(space, config)
    if problems:
        raise AlgorithmError("invalid configuration: " + "; ".join(problems))
    config = cs.buffer_size_clamp(space, config, state.total_timesteps)
    for name in STRUCTURAL:
        if config.get(name) != state.config.get(name):
            raise AlgorithmError(f"{name} cannot change during a run")
    state.config = config
    _MODULES[state.algorithm].apply_config(state)
    return state


def evaluate(state: TrainingState, n_episodes: int, eval_seed: int) -> float:
    """Mean undiscounted return of the greedy / mean-action policy over ``n_episodes`` fresh episodes."""
    if n_episodes < 1:
        raise AlgorithmError("n_episodes must be >= 1")
    seeds = [derive_seed(eval_seed, state.env_name, "eval", i) for i in range(n_episodes)]
    env = make_from_seeds(state.env_name, seeds)
    act = _MODULES[state.algorithm].greedy_actions
    returns = np.zeros(n_episodes)
    active = np.ones(n_episodes, dtype=bool)
    while active.any():
        _, r, term, trunc, _ = env.step(act(state, env.obs))
        returns += np.where(active, r, 0.0)
        active &= ~(term | trunc)
    return float(np.mean(returns))


def save_checkpoint(state: TrainingState, path, extra_meta: dict | None = None) -> Path:
    meta = {"algorithm": state.algorithm, "env_name": state.env_name, "step": state.step,
            "config": dict(state.config.values), **(extra_meta or {})}
    return save_tree(path, state.to_tree(), meta)


def load_checkpoint(path, with_manifest: bool = False):
    tree, manifest = load_tree(path)
    state = TrainingState.from_tree(tree)
    return (state, manifest) if with_manifest else state
