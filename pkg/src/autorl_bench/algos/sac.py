"""SAC with twin critics, a tanh-squashed gaussian actor and automatic temperature.

Actions are stored in the normalised range [-1, 1] and rescaled to the
environment bounds only when stepping. The actor outputs ``[mean, log_std]``
with ``log_std`` clipped to [-5, 2]. Rewards are multiplied by the reward
scale before they enter the buffer. Without a target network the online
critics supply the bootstrap values.
"""

from __future__ import annotations

import math

import numpy as np

from .. import nn
from .common import Metrics, TrainingDiverged, TrainingState, check_finite, mlp, polyak, track_episodes
from .replay import ReplayBuffer

LOG_STD_MIN, LOG_STD_MAX = -5.0, 2.0
SQUASH_EPS = 1e-6
LOG_2PI = math.log(2.0 * math.pi)


def setup(state: TrainingState, rng: np.random.Generator) -> None:
    spec = state.env.spec
    cfg = state.config
    obs_dim, d = spec.observation_space.dim, spec.action_space.dim
    actor = mlp(rng, obs_dim, 2 * d, out_gain=0.01)
    q1 = mlp(rng, obs_dim + d, 1)
    q2 = mlp(rng, obs_dim + d, 1)
    state.nets = {"actor": actor, "q1": q1, "q2": q2}
    if cfg["use_target_network"]:
        state.nets["q1_target"], state.nets["q2_target"] = q1.copy(), q2.copy()
    lr = cfg["learning_rate"]
    state.extra["log_alpha"] = np.zeros(1)
    state.opts = {
        "actor": nn.adam_init(actor, lr=lr),
        "critic": nn.adam_init({"q1": q1, "q2": q2}, lr=lr),
        "alpha": nn.adam_init(state.extra["log_alpha"], lr=lr),
    }
    prio = bool(cfg["buffer_prio_sampling"])
    state.buffer = ReplayBuffer(cfg["buffer_size"], obs_dim, d, False, prio,
                                cfg.get("buffer_alpha", 0.6), cfg.get("buffer_epsilon", 1e-6))


def apply_config(state: TrainingState) -> None:
    cfg = state.config
    for opt in state.opts.values():
        opt.lr = float(cfg["learning_rate"])
    buf = state.buffer
    if buf.prioritized:
        buf.eps = float(cfg["buffer_epsilon"])
        if cfg["buffer_alpha"] != buf.alpha:
            buf.set_alpha(cfg["buffer_alpha"])
    buf.resize(cfg["buffer_size"])


def _to_env(state: TrainingState, a: np.ndarray) -> np.ndarray:
    space = state.env.spec.action_space
    low, high = np.array(space.low), np.array(space.high)
    return np.clip(low + (a + 1.0) * 0.5 * (high - low), low, high)


def squashed_sample(actor_out: np.ndarray, noise: np.ndarray):
    """Reparameterised sample; returns (action, log_prob, pieces needed for the gradient)."""
    d = actor_out.shape[1] // 2
    mu, raw_ls = actor_out[:, :d], actor_out[:, d:]
    ls = np.clip(raw_ls, LOG_STD_MIN, LOG_STD_MAX)
    std = np.exp(ls)
    u = mu + std * noise
    a = np.tanh(u)
    logp = np.sum(-0.5 * noise**2 - ls - 0.5 * LOG_2PI - np.log(1.0 - a * a + SQUASH_EPS), axis=1)
    return a, logp, {"std": std, "ls_mask": (raw_ls > LOG_STD_MIN) & (raw_ls < LOG_STD_MAX)}


def critic_loss_and_grads(q: nn.MLPParams, obs, actions, y, weights):
    """``0.5 * mean(w * (Q(s, a) - y)^2)``; returns (loss, td, gradient)."""
    tape = nn.Tape()
    qv = nn.forward(q, np.concatenate([obs, actions], axis=1), tape)[:, 0]
    td = qv - y
    loss = 0.5 * float(np.mean(weights * td * td))
    grads, _ = nn.backward(q, tape, (weights * td / len(y))[:, None])
    return loss, td, grads


def actor_loss_and_grads(actor: nn.MLPParams, q1: nn.MLPParams, q2: nn.MLPParams, obs, noise, alpha: float):
    """``mean(alpha * log_pi(a|s) - min(Q1, Q2)(s, a))`` with ``a`` reparameterised by ``noise``.

    Returns (loss, log_probs, gradient for the actor).
    """
    B, d = noise.shape
    atape = nn.Tape()
    aout = nn.forward(actor, obs, atape)
    a, logp, aux = squashed_sample(aout, noise)
    x = np.concatenate([obs, a], axis=1)
    t1, t2 = nn.Tape(), nn.Tape()
    v1 = nn.forward(q1, x, t1)[:, 0]
    v2 = nn.forward(q2, x, t2)[:, 0]
    use1 = v1 <= v2
    qmin = np.where(use1, v1, v2)
    loss = float(np.mean(alpha * logp - qmin))
    _, gx1 = nn.backward(q1, t1, use1.astype(np.float64)[:, None])
    _, gx2 = nn.backward(q2, t2, (~use1).astype(np.float64)[:, None])
    dq_da = (gx1 + gx2)[:, -d:]
    one_m_a2 = 1.0 - a * a
    k = 2.0 * a * one_m_a2 / (one_m_a2 + SQUASH_EPS)  # d(-log(1 - tanh(u)^2 + eps))/du
    dq_du = dq_da * one_m_a2
    s_eps = aux["std"] * noise
    g_mu = (alpha * k - dq_du) / B
    g_ls = (alpha * (-1.0 + k * s_eps) - dq_du * s_eps) / B * aux["ls_mask"]
    grads, _ = nn.backward(actor, atape, np.concatenate([g_mu, g_ls], axis=1))
    return loss, logp, grads


def train(state: TrainingState, n_vec_steps: int, metrics: Metrics) -> None:
    cfg = state.config
    d = state.env.spec.action_space.dim
    rng_a = state.rngs["action"]
    buf = state.buffer
    for _ in range(n_vec_steps):
        obs = state.env.obs
        if state.step < cfg["learning_starts"]:
            a = rng_a.uniform(-1.0, 1.0, size=(state.n_envs, d))
        else:
            aout = nn.forward(state.nets["actor"], obs)
            a, _, _ = squashed_sample(aout, rng_a.standard_normal((state.n_envs, d)))
        _, rewards, term, trunc, info = state.env.step(_to_env(state, a))
        state.step += state.n_envs
        track_episodes(state, rewards, term, trunc, metrics)
        buf.add(obs, a, rewards * cfg["reward_scale"], info["final_obs"], term)
        if len(buf) >= cfg["learning_starts"] and len(buf) >= cfg["batch_size"]:
            for _ in range(state.fixed["gradient_steps"]):
                update(state, metrics)


def update(state: TrainingState, metrics: Metrics) -> None:
    cfg, buf, nets = state.config, state.buffer, state.nets
    if len(buf) < cfg["learning_starts"] or len(buf) < cfg["batch_size"]:
        return
    rng = state.rngs["buffer"]
    idx, w = buf.sample(cfg["batch_size"], rng, cfg.get("buffer_beta", 1.0))
    b = buf.batch(idx)
    B, d = b["actions"].shape
    alpha = float(np.exp(state.extra["log_alpha"][0]))
    gamma = state.fixed["gamma"]

    nout = nn.forward(nets["actor"], b["next_obs"])
    na, nlogp, _ = squashed_sample(nout, rng.standard_normal((B, d)))
    nx = np.concatenate([b["next_obs"], na], axis=1)
    t1 = nets.get("q1_target", nets["q1"])
    t2 = nets.get("q2_target", nets["q2"])
    qn = np.minimum(nn.forward(t1, nx)[:, 0], nn.forward(t2, nx)[:, 0])
    y = b["rewards"] + gamma * (1.0 - b["terminated"]) * (qn - alpha * nlogp)

    l1, td1, g1 = critic_loss_and_grads(nets["q1"], b["obs"], b["actions"], y, w)
    l2, td2, g2 = critic_loss_and_grads(nets["q2"], b["obs"], b["actions"], y, w)
    critic_loss = l1 + l2
    check_finite(critic_loss, "SAC critic loss", metrics)
    cgrads = {"q1": g1, "q2": g2}
    try:
        new_c, state.opts["critic"] = nn.adam_update({"q1": nets["q1"], "q2": nets["q2"]}, cgrads,
                                                     state.opts["critic"], name="sac.critic")
        nets["q1"], nets["q2"] = new_c["q1"], new_c["q2"]

        noise = rng.standard_normal((B, d))
        actor_loss, logp, agrads = actor_loss_and_grads(nets["actor"], nets["q1"], nets["q2"], b["obs"], noise, alpha)
        check_finite(actor_loss, "SAC actor loss", metrics)
        nets["actor"], state.opts["actor"] = nn.adam_update(nets["actor"], agrads, state.opts["actor"],
                                                            name="sac.actor")
        g_alpha = np.array([-float(np.mean(logp - d))])  # target entropy is -d
        state.extra["log_alpha"], state.opts["alpha"] = nn.adam_update(state.extra["log_alpha"], g_alpha,
                                                                        state.opts["alpha"], name="sac.alpha")
    except nn.NonFiniteGradient as e:
        raise TrainingDiverged(str(e), metrics) from e
    buf.update_priorities(idx, 0.5 * (np.abs(td1) + np.abs(td2)))
    if "q1_target" in nets:
        tau = cfg["tau"]
        nets["q1_target"] = polyak(nets["q1_target"], nets["q1"], tau)
        nets["q2_target"] = polyak(nets["q2_target"], nets["q2"], tau)
    norm = nn.global_norm({"critic": cgrads, "actor": agrads})
    check_finite(norm, "SAC gradient", metrics)
    metrics.record(actor_loss, critic_loss, -float(np.mean(logp)), norm)


def greedy_actions(state: TrainingState, obs: np.ndarray) -> np.ndarray:
    aout = nn.forward(state.nets["actor"], obs)
    d = aout.shape[1] // 2
    return _to_env(state, np.tanh(aout[:, :d]))
