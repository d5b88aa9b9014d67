"""DQN with optional prioritised replay and optional hard-synced target network.

Without a target network the online network supplies the bootstrap values.
Huber loss (delta 1) weighted by importance weights; gradients clipped at a
fixed global norm of 10.
"""

from __future__ import annotations

import numpy as np

from .. import nn
from .common import (Metrics, TrainingDiverged, TrainingState, check_finite, epsilon_schedule, mlp,
                     track_episodes)
from .replay import ReplayBuffer

MAX_GRAD_NORM = 10.0
HUBER_DELTA = 1.0


def setup(state: TrainingState, rng: np.random.Generator) -> None:
    spec = state.env.spec
    cfg = state.config
    q = mlp(rng, spec.observation_space.dim, spec.action_space.n, out_gain=1.0)
    state.nets = {"q": q}
    if cfg["use_target_network"]:
        state.nets["q_target"] = q.copy()
    state.opts = {"q": nn.adam_init(q, lr=cfg["learning_rate"])}
    prio = bool(cfg["buffer_prio_sampling"])
    state.buffer = ReplayBuffer(cfg["buffer_size"], spec.observation_space.dim, 1, True, prio,
                                cfg.get("buffer_alpha", 0.6), cfg.get("buffer_epsilon", 1e-6))
    state.extra["grad_steps"] = 0
    state.extra["vec_steps"] = 0


def apply_config(state: TrainingState) -> None:
    cfg = state.config
    state.opts["q"].lr = float(cfg["learning_rate"])
    buf = state.buffer
    if buf.prioritized:
        buf.eps = float(cfg["buffer_epsilon"])
        if cfg["buffer_alpha"] != buf.alpha:
            buf.set_alpha(cfg["buffer_alpha"])
    buf.resize(cfg["buffer_size"])


def loss_and_grads(q: nn.MLPParams, bootstrap_q: nn.MLPParams, batch: dict, weights: np.ndarray, gamma: float):
    """Importance-weighted Huber TD loss; returns (loss, td errors, targets, gradient for ``q``)."""
    B = len(batch["rewards"])
    next_q = nn.forward(bootstrap_q, batch["next_obs"])
    target = batch["rewards"] + gamma * (1.0 - batch["terminated"]) * next_q.max(axis=1)
    tape = nn.Tape()
    qs = nn.forward(q, batch["obs"], tape)
    rows = np.arange(B)
    td = qs[rows, batch["actions"]] - target
    absd = np.abs(td)
    huber = np.where(absd <= HUBER_DELTA, 0.5 * td * td, HUBER_DELTA * (absd - 0.5 * HUBER_DELTA))
    loss = float(np.mean(weights * huber))
    g = np.zeros_like(qs)
    g[rows, batch["actions"]] = weights * np.clip(td, -HUBER_DELTA, HUBER_DELTA) / B
    grads, _ = nn.backward(q, tape, g)
    return loss, td, target, grads


def train(state: TrainingState, n_vec_steps: int, metrics: Metrics) -> None:
    cfg = state.config
    n_actions = state.env.spec.action_space.n
    buf = state.buffer
    rng_a = state.rngs["action"]
    for _ in range(n_vec_steps):
        obs = state.env.obs
        eps = epsilon_schedule(cfg["initial_epsilon"], cfg["target_epsilon"], state.step, state.total_timesteps)
        greedy = np.argmax(nn.forward(state.nets["q"], obs), axis=1)
        explore = rng_a.random(state.n_envs) < eps
        randoms = rng_a.integers(n_actions, size=state.n_envs)
        actions = np.where(explore, randoms, greedy)
        _, rewards, term, trunc, info = state.env.step(actions)
        state.step += state.n_envs
        state.extra["vec_steps"] += 1
        track_episodes(state, rewards, term, trunc, metrics)
        buf.add(obs, actions, rewards, info["final_obs"], term)
        if (len(buf) >= cfg["learning_starts"] and len(buf) >= cfg["batch_size"]
                and state.extra["vec_steps"] % state.fixed["train_frequency"] == 0):
            for _ in range(state.fixed["gradient_steps"]):
                update(state, metrics)


def update(state: TrainingState, metrics: Metrics) -> None:
    cfg, buf = state.config, state.buffer
    if len(buf) < cfg["learning_starts"] or len(buf) < cfg["batch_size"]:
        return  # no-op before learning starts
    idx, weights = buf.sample(cfg["batch_size"], state.rngs["buffer"], cfg.get("buffer_beta", 1.0))
    batch = buf.batch(idx)
    q = state.nets["q"]
    boot = state.nets.get("q_target", q)
    loss, td, _, grads = loss_and_grads(q, boot, batch, weights, state.fixed["gamma"])
    check_finite(loss, "DQN loss", metrics)
    norm = nn.global_norm(grads)
    check_finite(norm, "DQN gradient", metrics)
    grads = nn.clip_grad_norm(grads, MAX_GRAD_NORM)
    try:
        state.nets["q"], state.opts["q"] = nn.adam_update(q, grads, state.opts["q"], name="dqn.q")
    except nn.NonFiniteGradient as e:
        raise TrainingDiverged(str(e), metrics) from e
    buf.update_priorities(idx, np.abs(td))
    state.extra["grad_steps"] += 1
    if "q_target" in state.nets and state.extra["grad_steps"] % cfg["target_update_interval"] == 0:
        state.nets["q_target"] = state.nets["q"].copy()
    metrics.record(0.0, loss, 0.0, norm)


def greedy_actions(state: TrainingState, obs: np.ndarray) -> np.ndarray:
    return np.argmax(nn.forward(state.nets["q"], obs), axis=1)
