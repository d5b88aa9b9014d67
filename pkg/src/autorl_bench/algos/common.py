from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .. import nn
from ..config_space import Configuration
from ..envs import VecEnv, make_from_seeds
from ..seeding import rng_from_state, rng_state
from .replay import ReplayBuffer

ALGORITHMS = ("ppo", "dqn", "sac")
HIDDEN = (64, 64)
DIVERGENCE_RETURN = 1e9
EPSILON_DECAY_FRACTION = 0.5


class AlgorithmError(ValueError):
    pass


@dataclass
class Metrics:
    policy_loss: list[float] = field(default_factory=list)
    value_loss: list[float] = field(default_factory=list)
    entropy: list[float] = field(default_factory=list)
    grad_norm: list[float] = field(default_factory=list)
    episode_returns: list[float] = field(default_factory=list)
    steps: int = 0

    @property
    def n_updates(self) -> int:
        return len(self.grad_norm)

    @property
    def grad_norm_mean(self) -> float:
        return float(np.mean(self.grad_norm)) if self.grad_norm else 0.0

    @property
    def grad_norm_var(self) -> float:
        return float(np.var(self.grad_norm)) if self.grad_norm else 0.0

    @property
    def loss_mean(self) -> float:
        vals = [p + v for p, v in zip(self.policy_loss, self.value_loss)]
        return float(np.mean(vals)) if vals else 0.0

    def record(self, policy_loss: float, value_loss: float, entropy: float, grad_norm: float) -> None:
        self.policy_loss.append(float(policy_loss))
        self.value_loss.append(float(value_loss))
        self.entropy.append(float(entropy))
        self.grad_norm.append(float(grad_norm))

    def summary(self) -> dict:
        def last(xs):
            return xs[-1] if xs else float("nan")

        return {
            "steps": self.steps,
            "n_updates": self.n_updates,
            "policy_loss": last(self.policy_loss),
            "value_loss": last(self.value_loss),
            "entropy": last(self.entropy),
            "grad_norm_mean": self.grad_norm_mean,
            "grad_norm_var": self.grad_norm_var,
            "loss_mean": self.loss_mean,
            "episodes": len(self.episode_returns),
            "train_return_mean": float(np.mean(self.episode_returns)) if self.episode_returns else float("nan"),
        }


class TrainingDiverged(RuntimeError):
    """Raised when a loss, gradient or return goes non-finite or explodes; carries the metrics so far."""

    def __init__(self, reason: str, metrics: Metrics):
        super().__init__(f"training diverged: {reason}")
        self.reason = reason
        self.metrics = metrics


@dataclass
class TrainingState:
    algorithm: str
    env_name: str
    seed: int
    config: Configuration
    fixed: dict
    total_timesteps: int
    env: VecEnv
    nets: dict[str, nn.MLPParams]
    opts: dict[str, nn.AdamState]
    rngs: dict[str, np.random.Generator]
    buffer: ReplayBuffer | None = None
    extra: dict = field(default_factory=dict)
    step: int = 0
    running_return: np.ndarray | None = None

    @property
    def n_envs(self) -> int:
        return self.env.n_envs

    def to_tree(self) -> dict:
        return {
            "algorithm": self.algorithm,
            "env_name": self.env_name,
            "seed": self.seed,
            "config": {"values": dict(self.config.values), "space_id": self.config.space_id},
            "fixed": dict(self.fixed),
            "total_timesteps": self.total_timesteps,
            "step": self.step,
            "env": self.env.state_dict(),
            "nets": {k: mlp_to_tree(v) for k, v in self.nets.items()},
            "opts": {k: adam_to_tree(v) for k, v in self.opts.items()},
            "rngs": {k: rng_state(v) for k, v in self.rngs.items()},
            "buffer": self.buffer.state_dict() if self.buffer is not None else None,
            "extra": self.extra,
            "running_return": self.running_return,
        }

    @classmethod
    def from_tree(cls, t: dict) -> "TrainingState":
        env_state = t["env"]
        env = make_from_seeds(t["env_name"], env_state["seeds"])
        env.load_state_dict(env_state)
        return cls(
            algorithm=t["algorithm"],
            env_name=t["env_name"],
            seed=int(t["seed"]),
            config=Configuration(dict(t["config"]["values"]), t["config"]["space_id"]),
            fixed=dict(t["fixed"]),
            total_timesteps=int(t["total_timesteps"]),
            env=env,
            nets={k: mlp_from_tree(v) for k, v in t["nets"].items()},
            opts={k: adam_from_tree(v) for k, v in t["opts"].items()},
            rngs={k: rng_from_state(v) for k, v in t["rngs"].items()},
            buffer=ReplayBuffer.from_state_dict(t["buffer"]) if t["buffer"] is not None else None,
            extra=_copy_tree(t["extra"]),
            step=int(t["step"]),
            running_return=np.array(t["running_return"], dtype=np.float64),
        )

    def copy(self) -> "TrainingState":
        return TrainingState.from_tree(_copy_tree(self.to_tree()))


def _copy_tree(t):
    if isinstance(t, np.ndarray):
        return t.copy()
    if isinstance(t, dict):
        return {k: _copy_tree(v) for k, v in t.items()}
    if isinstance(t, list):
        return [_copy_tree(v) for v in t]
    return t


def mlp_to_tree(p: nn.MLPParams) -> dict:
    return {"activation": p.activation, "head": p.head, "arrays": dict(p.arrays())}


def mlp_from_tree(t: dict) -> nn.MLPParams:
    arrays = t["arrays"]
    n = sum(1 for k in arrays if k.endswith(".weight"))
    return nn.MLPParams(
        [np.array(arrays[f"layers.{i}.weight"]) for i in range(n)],
        [np.array(arrays[f"layers.{i}.bias"]) for i in range(n)],
        t["activation"], t["head"],
        np.array(arrays["log_std"]) if "log_std" in arrays else None,
    )


def adam_to_tree(s: nn.AdamState) -> dict:
    return {"m": dict(s.m), "v": dict(s.v), "t": s.t, "lr": s.lr, "beta1": s.beta1, "beta2": s.beta2,
            "eps": s.eps}


def adam_from_tree(t: dict) -> nn.AdamState:
    return nn.AdamState({k: np.array(v) for k, v in t["m"].items()}, {k: np.array(v) for k, v in t["v"].items()},
                        int(t["t"]), float(t["lr"]), float(t["beta1"]), float(t["beta2"]), float(t["eps"]))


# ---------------------------------------------------------------------------
# shared pieces


def mlp(rng, n_in: int, n_out: int, head: str = "linear", out_gain: float = 1.0, log_std_init: float = 0.0):
    return nn.init_mlp(rng, [n_in, *HIDDEN, n_out], "tanh", head, math.sqrt(2.0), out_gain, log_std_init)


def gae(rewards, values, dones, last_value, gamma: float, lam: float):
    """Generalised advantage estimates over the leading (time) axis.

    ``dones[t]`` marks that the episode ended at step ``t`` so nothing is
    bootstrapped across it. Returns (advantages, returns = advantages + values).
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    notdone = 1.0 - np.asarray(dones, dtype=np.float64)
    adv = np.zeros_like(rewards)
    next_value = np.asarray(last_value, dtype=np.float64)
    running = np.zeros_like(next_value)
    for t in range(len(rewards) - 1, -1, -1):
        delta = rewards[t] + gamma * notdone[t] * next_value - values[t]
        running = delta + gamma * lam * notdone[t] * running
        adv[t] = running
        next_value = values[t]
    return adv, adv + values


def epsilon_schedule(initial: float, target: float, step: int, total_steps: int,
                     decay_fraction: float = EPSILON_DECAY_FRACTION) -> float:
    if step < 0:
        raise ValueError("step must be >= 0")
    end = total_steps * decay_fraction
    if end <= 0 or step >= end:
        return float(target)
    frac = step / end
    return float(initial + frac * (target - initial))


def polyak(target, online, tau: float):
    """``target <- (1 - tau) * target + tau * online`` over matching parameter trees."""
    t_leaves = nn.tree_leaves(target)
    o_leaves = nn.tree_leaves(online)
    return nn.tree_rebuild(target, [(1.0 - tau) * t + tau * o for (_, t), (_, o) in zip(t_leaves, o_leaves)])


def track_episodes(state: TrainingState, rewards, terminated, truncated, metrics: Metrics) -> None:
    state.running_return += rewards
    done = terminated | truncated
    for i in np.flatnonzero(done):
        metrics.episode_returns.append(float(state.running_return[i]))
        state.running_return[i] = 0.0
    if np.any(np.abs(state.running_return) > DIVERGENCE_RETURN) or not np.all(np.isfinite(state.running_return)):
        raise TrainingDiverged("episode return exceeded 1e9 in magnitude", metrics)


def check_finite(value: float, what: str, metrics: Metrics) -> None:
    if not math.isfinite(value):
        raise TrainingDiverged(f"non-finite {what}", metrics)
