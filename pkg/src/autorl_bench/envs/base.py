from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..seeding import derive_seed, rng_from_state, rng_state


class EnvError(ValueError):
    pass


class ActionError(EnvError):
    def __init__(self, index: int, action, space: "Space"):
        super().__init__(f"env {index}: action {action!r} not in {space}")
        self.index = index


@dataclass(frozen=True)
class Space:
    kind: str  # "discrete" | "box"
    n: int = 0
    low: tuple[float, ...] = ()
    high: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind == "discrete":
            if self.n < 1:
                raise EnvError("discrete space needs n >= 1")
        elif self.kind == "box":
            if len(self.low) != len(self.high) or any(l > h for l, h in zip(self.low, self.high)):
                raise EnvError("box space needs low <= high elementwise")
        else:
            raise EnvError(f"unknown space kind {self.kind!r}")

    @classmethod
    def discrete(cls, n: int) -> "Space":
        return cls("discrete", n=n)

    @classmethod
    def box(cls, low, high) -> "Space":
        return cls("box", low=tuple(float(v) for v in low), high=tuple(float(v) for v in high))

    @property
    def dim(self) -> int:
        return self.n if self.kind == "discrete" else len(self.low)

    @property
    def is_discrete(self) -> bool:
        return self.kind == "discrete"

    def __str__(self) -> str:
        if self.is_discrete:
            return f"discrete({self.n})"
        return f"box({list(self.low)}, {list(self.high)})"


@dataclass(frozen=True)
class EnvSpec:
    name: str
    observation_space: Space
    action_space: Space
    max_episode_steps: int
    default_timesteps: int
    domain: str  # "classic-control" | "gridworld"
    floor: float  # worst-score sentinel for diverged runs
    budgets: dict = field(default_factory=dict, compare=False, hash=False)

    def timesteps_for(self, algorithm: str) -> int:
        return int(self.budgets.get(algorithm, self.default_timesteps))


class VecEnv:
    """Vector of independent environment instances, auto-resetting on episode end.

    ``step`` returns ``(obs, rewards, terminated, truncated, info)`` where
    ``info["final_obs"]`` holds the pre-reset observation of every sub-env
    (equal to ``obs`` for sub-envs that did not finish).
    """

    spec: EnvSpec

    def __init__(self, spec: EnvSpec, seeds: list[int]):
        if not seeds:
            raise EnvError("need at least one sub-environment")
        self.spec = spec
        self.n_envs = len(seeds)
        self.seeds = [int(s) for s in seeds]
        self.rngs = [np.random.Generator(np.random.PCG64(s)) for s in self.seeds]
        self.t = np.zeros(self.n_envs, dtype=np.int64)
        self._init_storage()
        for i in range(self.n_envs):
            self._reset_one(i)
        self.obs = self._observe()

    # subclasses implement these
    def _init_storage(self) -> None:
        raise NotImplementedError

    def _reset_one(self, i: int) -> None:
        raise NotImplementedError

    def _observe(self) -> np.ndarray:
        raise NotImplementedError

    def _advance(self, actions: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Advance all sub-envs one step; return (rewards, terminated)."""
        raise NotImplementedError

    def _physical_state(self) -> dict[str, np.ndarray]:
        raise NotImplementedError

    def _load_physical_state(self, arrays: dict[str, np.ndarray]) -> None:
        raise NotImplementedError

    def _check_actions(self, actions) -> np.ndarray:
        space = self.spec.action_space
        if space.is_discrete:
            a = np.asarray(actions)
            if a.shape != (self.n_envs,):
                raise EnvError(f"expected {self.n_envs} actions, got shape {a.shape}")
            for i, v in enumerate(a):
                if not (float(v).is_integer() and 0 <= v < space.n):
                    raise ActionError(i, v, space)
            return a.astype(np.int64)
        a = np.asarray(actions, dtype=np.float64)
        if a.shape != (self.n_envs, space.dim):
            raise EnvError(f"expected actions of shape {(self.n_envs, space.dim)}, got {a.shape}")
        low, high = np.array(space.low), np.array(space.high)
        bad = ~np.all(np.isfinite(a) & (a >= low) & (a <= high), axis=1)
        if bad.any():
            i = int(np.argmax(bad))
            raise ActionError(i, a[i].tolist(), space)
        return a

    def step(self, actions):
        a = self._check_actions(actions)
        rewards, terminated = self._advance(a)
        self.t += 1
        truncated = (self.t >= self.spec.max_episode_steps) & ~terminated
        final_obs = self._observe()
        done = terminated | truncated
        if done.any():
            for i in np.flatnonzero(done):
                self._reset_one(int(i))
                self.t[i] = 0
            obs = self._observe()
        else:
            obs = final_obs
        self.obs = obs
        return obs, rewards, terminated, truncated, {"final_obs": final_obs}

    def state_dict(self) -> dict:
        return {
            "name": self.spec.name,
            "seeds": list(self.seeds),
            "rngs": [rng_state(r) for r in self.rngs],
            "t": self.t.copy(),
            "physical": {k: v.copy() for k, v in self._physical_state().items()},
        }

    def load_state_dict(self, state: dict) -> None:
        if state["name"] != self.spec.name or len(state["rngs"]) != self.n_envs:
            raise EnvError("state does not belong to this environment vector")
        self.seeds = [int(s) for s in state["seeds"]]
        self.rngs = [rng_from_state(s) for s in state["rngs"]]
        self.t = np.asarray(state["t"], dtype=np.int64).copy()
        self._load_physical_state({k: np.asarray(v).copy() for k, v in state["physical"].items()})
        self.obs = self._observe()


def sub_env_seeds(name: str, n_envs: int, seed: int) -> list[int]:
    return [derive_seed(seed, name, i) for i in range(n_envs)]
