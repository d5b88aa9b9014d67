"""PPO with separate actor and critic MLPs.

Rollouts of ``n_steps`` vector steps live in the training state, so a call to
``train`` that ends mid-rollout resumes filling the same rollout next time and
the update happens only once it is full. Truncated episodes are bootstrapped
by adding ``gamma * V(final_obs)`` to the last reward.
"""

from __future__ import annotations

import math

import numpy as np

from .. import nn
from .common import Metrics, TrainingDiverged, TrainingState, check_finite, gae, mlp, track_episodes

LOG_2PI = math.log(2.0 * math.pi)
ADV_STD_FLOOR = 1e-8


def setup(state: TrainingState, rng: np.random.Generator) -> None:
    spec = state.env.spec
    obs_dim = spec.observation_space.dim
    act = spec.action_space
    head = "categorical" if act.is_discrete else "gaussian"
    actor = mlp(rng, obs_dim, act.dim, head=head, out_gain=0.0)  # uniform initial policy
    critic = mlp(rng, obs_dim, 1, out_gain=1.0)
    state.nets = {"actor": actor, "critic": critic}
    state.opts = {"ac": nn.adam_init(state.nets, lr=state.config["learning_rate"])}
    T, n = state.fixed["n_steps"], state.n_envs
    act_shape = (T, n) if act.is_discrete else (T, n, act.dim)
    state.extra["rollout"] = {
        "obs": np.zeros((T, n, obs_dim)),
        "actions": np.zeros(act_shape, dtype=np.int64 if act.is_discrete else np.float64),
        "logp": np.zeros((T, n)),
        "values": np.zeros((T, n)),
        "rewards": np.zeros((T, n)),
        "dones": np.zeros((T, n), dtype=bool),
        "pos": 0,
    }


def apply_config(state: TrainingState) -> None:
    state.opts["ac"].lr = float(state.config["learning_rate"])


def log_prob_entropy(actor_out: np.ndarray, actions: np.ndarray, discrete: bool):
    if discrete:
        logp = actor_out[np.arange(len(actions)), actions]
        ent = -np.sum(np.exp(actor_out) * actor_out, axis=1)
        return logp, ent
    d = actor_out.shape[1] // 2
    mu, ls = actor_out[:, :d], actor_out[:, d:]
    z = (actions - mu) / np.exp(ls)
    logp = np.sum(-0.5 * z * z - ls - 0.5 * LOG_2PI, axis=1)
    ent = np.sum(ls + 0.5 * (1.0 + LOG_2PI), axis=1)
    return logp, ent


def loss_and_grads(nets: dict, mb: dict, clip_eps: float, vf_clip_eps: float, vf_coef: float,
                   ent_coef: float, discrete: bool):
    """Clipped-surrogate PPO loss on one minibatch and its gradient for ``{"actor", "critic"}``.

    ``mb`` holds obs, actions, logp_old, advantages (already normalised if
    requested), returns and values_old. Gradients at the clip boundary follow
    the branch selected by ``min``; inside-range equality counts as unclipped.
    """
    actor, critic = nets["actor"], nets["critic"]
    B = len(mb["advantages"])
    atape, ctape = nn.Tape(), nn.Tape()
    aout = nn.forward(actor, mb["obs"], atape)
    v = nn.forward(critic, mb["obs"], ctape)[:, 0]
    logp, ent = log_prob_entropy(aout, mb["actions"], discrete)
    A = mb["advantages"]
    ratio = np.exp(logp - mb["logp_old"])
    clipped = np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps)
    surr = np.minimum(ratio * A, clipped * A)
    policy_loss = -float(np.mean(surr))
    inside = (ratio > 1.0 - clip_eps) & (ratio < 1.0 + clip_eps)
    g_ratio = np.where((ratio * A < clipped * A) | inside, A, 0.0)
    g_logp = -g_ratio * ratio / B  # d(policy_loss)/d(logp)

    R, v_old = mb["returns"], mb["values_old"]
    if vf_clip_eps > 0:
        v_clip = v_old + np.clip(v - v_old, -vf_clip_eps, vf_clip_eps)
        lu, lc = (v - R) ** 2, (v_clip - R) ** 2
        value_loss = 0.5 * float(np.mean(np.maximum(lu, lc)))
        in_band = np.abs(v - v_old) < vf_clip_eps
        g_v = np.where(lu >= lc, v - R, np.where(in_band, v_clip - R, 0.0)) / B
    else:
        value_loss = 0.5 * float(np.mean((v - R) ** 2))
        g_v = (v - R) / B
    entropy = float(np.mean(ent))
    loss = policy_loss + vf_coef * value_loss - ent_coef * entropy

    g_out = np.zeros_like(aout)
    if discrete:
        g_out[np.arange(B), mb["actions"]] = g_logp
        p = np.exp(aout)
        g_out += ent_coef * p * (aout + 1.0) / B
    else:
        d = aout.shape[1] // 2
        mu, ls = aout[:, :d], aout[:, d:]
        z = (mb["actions"] - mu) / np.exp(ls)
        g_out[:, :d] = g_logp[:, None] * z / np.exp(ls)
        g_out[:, d:] = g_logp[:, None] * (z * z - 1.0) - ent_coef / B
    ga, _ = nn.backward(actor, atape, g_out)
    gc, _ = nn.backward(critic, ctape, (vf_coef * g_v)[:, None])
    stats = {"loss": loss, "policy_loss": policy_loss, "value_loss": value_loss, "entropy": entropy}
    return stats, {"actor": ga, "critic": gc}


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    std = float(np.std(adv))
    if std < ADV_STD_FLOOR:
        return np.zeros_like(adv)
    return (adv - np.mean(adv)) / std


def _sample_actions(state: TrainingState, aout: np.ndarray):
    rng = state.rngs["action"]
    if state.env.spec.action_space.is_discrete:
        cdf = np.cumsum(np.exp(aout), axis=1)
        u = rng.random(len(aout)) * cdf[:, -1]
        a = np.minimum((cdf <= u[:, None]).sum(axis=1), aout.shape[1] - 1)
        return a, a
    d = aout.shape[1] // 2
    a = aout[:, :d] + np.exp(aout[:, d:]) * rng.standard_normal((len(aout), d))
    space = state.env.spec.action_space
    return a, np.clip(a, space.low, space.high)


def train(state: TrainingState, n_vec_steps: int, metrics: Metrics) -> None:
    gamma = state.fixed["gamma"]
    ro = state.extra["rollout"]
    T = ro["obs"].shape[0]
    discrete = state.env.spec.action_space.is_discrete
    for _ in range(n_vec_steps):
        obs = state.env.obs
        aout = nn.forward(state.nets["actor"], obs)
        values = nn.forward(state.nets["critic"], obs)[:, 0]
        actions, env_actions = _sample_actions(state, aout)
        logp, _ = log_prob_entropy(aout, actions, discrete)
        _, rewards, term, trunc, info = state.env.step(env_actions)
        state.step += state.n_envs
        track_episodes(state, rewards, term, trunc, metrics)
        r = rewards.copy()
        if trunc.any():
            boot = nn.forward(state.nets["critic"], info["final_obs"][trunc])[:, 0]
            r[trunc] += gamma * boot
        k = ro["pos"]
        ro["obs"][k], ro["actions"][k], ro["logp"][k] = obs, actions, logp
        ro["values"][k], ro["rewards"][k], ro["dones"][k] = values, r, term | trunc
        ro["pos"] = k + 1
        if ro["pos"] == T:
            _update(state, metrics)
            ro["pos"] = 0


def _update(state: TrainingState, metrics: Metrics) -> None:
    cfg, ro = state.config, state.extra["rollout"]
    discrete = state.env.spec.action_space.is_discrete
    last_v = nn.forward(state.nets["critic"], state.env.obs)[:, 0]
    adv, ret = gae(ro["rewards"], ro["values"], ro["dones"], last_v, state.fixed["gamma"], cfg["gae_lambda"])
    N = adv.size
    flat = {
        "obs": ro["obs"].reshape(N, -1),
        "actions": ro["actions"].reshape((N,) + ro["actions"].shape[2:]),
        "logp_old": ro["logp"].reshape(N),
        "advantages": adv.reshape(N),
        "returns": ret.reshape(N),
        "values_old": ro["values"].reshape(N),
    }
    mb_size = min(int(cfg["batch_size"]), N)
    rng = state.rngs["update"]
    for _ in range(state.fixed["update_epochs"]):
        perm = rng.permutation(N)
        for start in range(0, N, mb_size):
            idx = perm[start:start + mb_size]
            mb = {k: v[idx] for k, v in flat.items()}
            if cfg["normalize_advantages"]:
                mb["advantages"] = normalize_advantages(mb["advantages"])
            stats, grads = loss_and_grads(state.nets, mb, cfg["clip_eps"], cfg["vf_clip_eps"], cfg["vf_coef"],
                                          cfg["ent_coef"], discrete)
            check_finite(stats["loss"], "PPO loss", metrics)
            norm = nn.global_norm(grads)
            check_finite(norm, "PPO gradient", metrics)
            grads = nn.clip_grad_norm(grads, cfg["max_grad_norm"])
            try:
                state.nets, state.opts["ac"] = nn.adam_update(state.nets, grads, state.opts["ac"], name="ppo")
            except nn.NonFiniteGradient as e:
                raise TrainingDiverged(str(e), metrics) from e
            metrics.record(stats["policy_loss"], stats["value_loss"], stats["entropy"], norm)


def greedy_actions(state: TrainingState, obs: np.ndarray) -> np.ndarray:
    aout = nn.forward(state.nets["actor"], obs)
    space = state.env.spec.action_space
    if space.is_discrete:
        return np.argmax(aout, axis=1)
    d = aout.shape[1] // 2
    return np.clip(aout[:, :d], space.low, space.high)
