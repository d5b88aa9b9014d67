"""Environment registry: ``make``, ``make_from_seeds`` and ``registered_envs``."""

from __future__ import annotations

from .base import ActionError, EnvError, EnvSpec, Space, VecEnv, sub_env_seeds
from .classic import Acrobot, CartPole, MountainCar, MountainCarContinuous, Pendulum
from .gridworld import OBS_DIM as GRID_OBS_DIM
from .gridworld import DoorKey, EmptyRandom, FourRooms, Unlock

__all__ = [
    "ActionError", "EnvError", "EnvSpec", "Space", "VecEnv",
    "make", "make_from_seeds", "registered_envs", "get_spec", "env_csv_rows",
]

_GRID_ACTIONS = Space.discrete(6)
_GRID_OBS = Space.box([0.0] * GRID_OBS_DIM, [1.0] * GRID_OBS_DIM)

# name -> (class, spec); budgets per algorithm copy the published environment tables
_REGISTRY: dict[str, tuple[type[VecEnv], EnvSpec]] = {}


def _register(cls, name, obs_space, act_space, max_steps, domain, floor, budgets):
    spec = EnvSpec(
        name=name,
        observation_space=obs_space,
        action_space=act_space,
        max_episode_steps=max_steps,
        default_timesteps=int(budgets.get("ppo", next(iter(budgets.values())))),
        domain=domain,
        floor=floor,
        budgets=dict(budgets),
    )
    _REGISTRY[name] = (cls, spec)


_inf = float("inf")
_register(CartPole, "cartpole", Space.box([-4.8, -_inf, -0.4189, -_inf], [4.8, _inf, 0.4189, _inf]),
          Space.discrete(2), 500, "classic-control", 0.0, {"ppo": 100_000, "dqn": 50_000})
_register(MountainCar, "mountaincar", Space.box([-1.2, -0.07], [0.6, 0.07]),
          Space.discrete(3), 200, "classic-control", -200.0, {"ppo": 1_000_000, "dqn": 120_000})
_register(Acrobot, "acrobot", Space.box([-1, -1, -1, -1, -12.566, -28.274], [1, 1, 1, 1, 12.566, 28.274]),
          Space.discrete(3), 500, "classic-control", -500.0, {"ppo": 1_000_000, "dqn": 100_000})
_register(Pendulum, "pendulum", Space.box([-1, -1, -8], [1, 1, 8]),
          Space.box([-2.0], [2.0]), 200, "classic-control", -1700.0, {"ppo": 100_000, "sac": 20_000})
_register(MountainCarContinuous, "mountaincar-continuous", Space.box([-1.2, -0.07], [0.6, 0.07]),
          Space.box([-1.0], [1.0]), 999, "classic-control", -100.0, {"ppo": 20_000, "sac": 50_000})
_register(EmptyRandom, "gridworld-empty-random-5x5", _GRID_OBS, _GRID_ACTIONS, 100, "gridworld", 0.0,
          {"ppo": 100_000, "dqn": 100_000})
_register(DoorKey, "gridworld-doorkey-5x5", _GRID_OBS, _GRID_ACTIONS, 250, "gridworld", 0.0,
          {"ppo": 1_000_000, "dqn": 1_000_000})
_register(FourRooms, "gridworld-fourrooms", _GRID_OBS, _GRID_ACTIONS, 676, "gridworld", 0.0,
          {"ppo": 1_000_000, "dqn": 1_000_000})
_register(Unlock, "gridworld-unlock", _GRID_OBS, _GRID_ACTIONS, 676, "gridworld", 0.0,
          {"ppo": 1_000_000, "dqn": 1_000_000})

ALIASES = {"gridworld-empty-random": "gridworld-empty-random-5x5", "gridworld-doorkey": "gridworld-doorkey-5x5"}


def _resolve(name: str) -> str:
    name = ALIASES.get(name, name)
    if name not in _REGISTRY:
        raise EnvError(f"unknown environment {name!r}; registered: {', '.join(_REGISTRY)}")
    return name


def get_spec(name: str) -> EnvSpec:
    return _REGISTRY[_resolve(name)][1]


def registered_envs() -> list[EnvSpec]:
    return [spec for _, spec in _REGISTRY.values()]


def make_from_seeds(name: str, seeds: list[int]) -> VecEnv:
    cls, spec = _REGISTRY[_resolve(name)]
    return cls(spec, seeds)


def make(name: str, n_envs: int, seed: int) -> VecEnv:
    """Build ``n_envs`` sub-environments; sub-env ``i`` is seeded from (seed, name, i)."""
    if n_envs < 1:
        raise EnvError("n_envs must be >= 1")
    name = _resolve(name)
    return make_from_seeds(name, sub_env_seeds(name, n_envs, seed))


CSV_COLUMNS = ["name", "obs_dim", "action_kind", "action_dim", "max_episode_steps", "default_timesteps"]


def env_csv_rows() -> list[dict]:
    return [
        {
            "name": s.name,
            "obs_dim": s.observation_space.dim,
            "action_kind": s.action_space.kind,
            "action_dim": s.action_space.dim,
            "max_episode_steps": s.max_episode_steps,
            "default_timesteps": s.default_timesteps,
        }
        for s in registered_envs()
    ]
