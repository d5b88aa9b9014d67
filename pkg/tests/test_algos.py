import filecmp
import os

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from autorl_bench import algos, nn
from autorl_bench.algos import dqn, ppo, sac
from autorl_bench.algos.checkpoint import load_tree, save_tree
from autorl_bench.algos.replay import ReplayBuffer, SumTree


def _leaves_equal(a, b):
    la, lb = nn.tree_leaves(a), nn.tree_leaves(b)
    return [k for k, _ in la] == [k for k, _ in lb] and all(np.array_equal(x, y) for (_, x), (_, y) in zip(la, lb))


def _states_equal(a, b):
    if not _leaves_equal(a.nets, b.nets) or a.step != b.step:
        return False
    for k in a.opts:
        if not (_leaves_equal(a.opts[k].m, b.opts[k].m) and _leaves_equal(a.opts[k].v, b.opts[k].v)):
            return False
    return np.array_equal(a.env.obs, b.env.obs)


# ---------------------------------------------------------------------------
# GAE / schedules / polyak


def _gae_bruteforce(r, v, done, last_v, gamma, lam):
    """O(T^2): A_t = sum_l (gamma*lam)^l delta_{t+l}, cut at episode ends."""
    T = len(r)
    vals = np.append(v, last_v)
    delta = [r[t] + gamma * (1 - done[t]) * vals[t + 1] - vals[t] for t in range(T)]
    adv = np.zeros(T)
    for t in range(T):
        acc, coef = 0.0, 1.0
        for j in range(t, T):
            acc += coef * delta[j]
            if done[j]:
                break
            coef *= gamma * lam
        adv[t] = acc
    return adv


def test_gae_single_done_step():
    adv, ret = algos.gae([2.0], [0.5], [True], 10.0, 0.99, 0.95)
    assert adv[0] == 2.0 - 0.5 and ret[0] == 2.0


def test_gae_lambda_zero_is_td_error():
    rng = np.random.default_rng(0)
    r, v = rng.standard_normal(6), rng.standard_normal(6)
    done = np.array([0, 0, 1, 0, 0, 0], dtype=bool)
    adv, _ = algos.gae(r, v, done, 0.3, 0.9, 0.0)
    nxt = np.append(v[1:], 0.3)
    np.testing.assert_array_equal(adv, r + 0.9 * (1 - done) * nxt - v)


def test_gae_matches_bruteforce():
    rng = np.random.default_rng(1)
    for _ in range(200):
        r, v = rng.standard_normal(5), rng.standard_normal(5)
        done = rng.random(5) < 0.3
        gamma, lam, last = rng.uniform(0.5, 1), rng.uniform(0, 1), rng.standard_normal()
        adv, _ = algos.gae(r, v, done, last, gamma, lam)
        np.testing.assert_allclose(adv, _gae_bruteforce(r, v, done, last, gamma, lam), rtol=0, atol=1e-12)


def test_epsilon_schedule():
    assert algos.epsilon_schedule(1.0, 0.05, 0, 1000) == 1.0
    assert algos.epsilon_schedule(1.0, 0.05, 500, 1000) == 0.05
    assert algos.epsilon_schedule(1.0, 0.05, 10_000, 1000) == 0.05
    assert algos.epsilon_schedule(0.9, 0.1, 250, 1000) == pytest.approx(0.5, abs=1e-12)


def test_polyak_tau_one_copies_online():
    rng = np.random.default_rng(2)
    a, b = nn.init_mlp(rng, [3, 4, 1]), nn.init_mlp(rng, [3, 4, 1])
    assert _leaves_equal(algos.polyak(a, b, 1.0), b)


def test_polyak_geometric_convergence():
    rng = np.random.default_rng(3)
    target, online = nn.init_mlp(rng, [3, 4, 1]), nn.init_mlp(rng, [3, 4, 1])
    err0 = {k: t - o for (k, t), (_, o) in zip(nn.tree_leaves(target), nn.tree_leaves(online))}
    tau, k = 0.01, 200
    for _ in range(k):
        target = algos.polyak(target, online, tau)
    for (name, t), (_, o) in zip(nn.tree_leaves(target), nn.tree_leaves(online)):
        np.testing.assert_allclose(t - o, (1 - tau) ** k * err0[name], rtol=0, atol=1e-9)


# ---------------------------------------------------------------------------
# replay


def test_sum_tree_consistency_under_interleaving():
    rng = np.random.default_rng(4)
    tree = SumTree(1000)
    for _ in range(10_000):
        n = rng.integers(1, 5)
        tree.update(rng.integers(1000, size=n), rng.exponential(size=n) * 10 ** rng.uniform(-3, 3))
    leaves = tree.leaves()
    assert abs(tree.total - leaves.sum()) <= 1e-9 * leaves.sum()


def test_sum_tree_sampling_follows_leaf_proportions():
    from scipy.stats import chisquare

    rng = np.random.default_rng(5)
    tree = SumTree(20)
    p = rng.uniform(0.1, 2.0, size=20)
    tree.update(np.arange(20), p)
    draws = tree.find(rng.random(100_000) * tree.total)
    counts = np.bincount(draws, minlength=20)
    assert chisquare(counts, 100_000 * p / p.sum()).pvalue > 0.001


def _filled_buffer(prio, n=500, capacity=1000):
    buf = ReplayBuffer(capacity, 2, 1, True, prioritized=prio, alpha=0.7, eps=1e-6)
    rng = np.random.default_rng(6)
    for i in range(n):
        buf.add(rng.standard_normal((1, 2)), [i % 3], [float(i)], rng.standard_normal((1, 2)), [False])
    return buf


def test_equal_priorities_sample_uniformly():
    buf = _filled_buffer(True, n=50)
    idx, w = buf.sample(100_000, np.random.default_rng(7), beta=1.0)
    counts = np.bincount(idx, minlength=50)
    mean, sd = 100_000 / 50, np.sqrt(100_000 * (1 / 50) * (49 / 50))
    assert np.all(np.abs(counts - mean) < 3 * sd + 1)  # one count of slack for the boundary
    np.testing.assert_array_equal(w, np.ones_like(w))


def test_priority_update_changes_distribution():
    buf = _filled_buffer(True, n=10)
    buf.update_priorities(np.arange(10), np.r_[np.full(9, 1.0), 9.0])
    idx, w = buf.sample(100_000, np.random.default_rng(8), beta=0.5)
    p = (np.r_[np.full(9, 1.0), 9.0] + 1e-6) ** 0.7
    p /= p.sum()
    assert abs(np.mean(idx == 9) - p[9]) < 4 * np.sqrt(p[9] * (1 - p[9]) / 100_000)
    # the over-sampled transition gets the smaller weight; normalisation puts the rest at 1
    np.testing.assert_allclose(w[idx == 9], ((10 * p[9]) / (10 * p[0])) ** -0.5, rtol=1e-12)
    assert np.all(w[idx != 9] == 1.0)


def test_buffer_ring_and_resize_keep_recent():
    buf = _filled_buffer(False, n=1500, capacity=1000)
    assert len(buf) == 1000
    assert sorted(buf.rewards[:1000].tolist()) == [float(i) for i in range(500, 1500)]
    buf.resize(300)
    assert len(buf) == 300 and buf.capacity == 300
    assert buf.rewards[:300].tolist() == [float(i) for i in range(1200, 1500)]
    buf.add(np.zeros((1, 2)), [0], [-1.0], np.zeros((1, 2)), [True])
    assert buf.rewards[0] == -1.0


def test_buffer_alpha_swap_rebuilds_tree():
    buf = _filled_buffer(True, n=20)
    buf.update_priorities(np.arange(20), np.arange(20, dtype=float))
    buf.set_alpha(0.3)
    np.testing.assert_allclose(buf.tree.leaves()[:20], buf.raw_priority[:20] ** 0.3, rtol=1e-15)


# ---------------------------------------------------------------------------
# loss gradients against finite differences


def _fd_tree(loss_fn, params, h=1e-6):
    leaves = nn.tree_leaves(params)
    out = []
    for li, (_, arr) in enumerate(leaves):
        g = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            vals = []
            for sgn in (1, -1):
                new = [a.copy() for _, a in leaves]
                new[li][idx] += sgn * h
                vals.append(loss_fn(nn.tree_rebuild(params, new)))
            g[idx] = (vals[0] - vals[1]) / (2 * h)
        out.append(g)
    return out


def _rel_err(analytic, numeric):
    worst = 0.0
    for (_, a), n in zip(nn.tree_leaves(analytic), numeric):
        worst = max(worst, float(np.max(np.abs(a - n) / np.maximum(1.0, np.abs(n)))))
    return worst


def _small(rng, n_in, n_out, head="linear"):
    net = nn.init_mlp(rng, [n_in, 5, n_out], "tanh", head, 1.0, 1.0, 0.2)
    return net.with_arrays({k: v + 0.1 * rng.standard_normal(v.shape) for k, v in net.arrays().items()})


@pytest.mark.parametrize("discrete", [True, False])
@pytest.mark.parametrize("vf_clip", [0.0, 0.2])
def test_ppo_gradients_match_finite_differences(discrete, vf_clip):
    rng = np.random.default_rng(9)
    B, obs_dim, d = 6, 3, 2
    actor = _small(rng, obs_dim, d, "categorical" if discrete else "gaussian")
    critic = _small(rng, obs_dim, 1)
    obs = rng.standard_normal((B, obs_dim))
    actions = rng.integers(d, size=B) if discrete else rng.standard_normal((B, d))
    logp_now, _ = ppo.log_prob_entropy(nn.forward(actor, obs), actions, discrete)
    mb = {"obs": obs, "actions": actions, "logp_old": logp_now + rng.uniform(-0.1, 0.1, B),
          "advantages": rng.standard_normal(B), "returns": rng.standard_normal(B),
          "values_old": nn.forward(critic, obs)[:, 0] + rng.uniform(-0.3, 0.3, B)}
    args = (0.3, vf_clip, 0.7, 0.05, discrete)
    _, grads = ppo.loss_and_grads({"actor": actor, "critic": critic}, mb, *args)
    numeric = _fd_tree(lambda p: ppo.loss_and_grads(p, mb, *args)[0]["loss"], {"actor": actor, "critic": critic})
    assert _rel_err(grads, numeric) < 1e-6


def test_dqn_gradients_match_finite_differences():
    rng = np.random.default_rng(10)
    q, qt = _small(rng, 3, 4), _small(rng, 3, 4)
    B = 8
    batch = {"obs": rng.standard_normal((B, 3)) * 2, "actions": rng.integers(4, size=B),
             "rewards": rng.standard_normal(B) * 2, "next_obs": rng.standard_normal((B, 3)),
             "terminated": rng.random(B) < 0.3}
    w = rng.uniform(0.2, 1.0, B)
    _, _, _, g = dqn.loss_and_grads(q, qt, batch, w, 0.9)
    numeric = _fd_tree(lambda p: dqn.loss_and_grads(p, qt, batch, w, 0.9)[0], q)
    assert _rel_err(g, numeric) < 1e-6


def test_dqn_gamma_zero_targets_are_rewards():
    rng = np.random.default_rng(11)
    q = _small(rng, 3, 2)
    batch = {"obs": rng.standard_normal((5, 3)), "actions": rng.integers(2, size=5),
             "rewards": rng.standard_normal(5), "next_obs": rng.standard_normal((5, 3)) * 100,
             "terminated": np.zeros(5, dtype=bool)}
    _, _, target, _ = dqn.loss_and_grads(q, q, batch, np.ones(5), 0.0)
    np.testing.assert_array_equal(target, batch["rewards"])


def test_sac_critic_gradients_match_finite_differences():
    rng = np.random.default_rng(12)
    q = _small(rng, 5, 1)
    obs, act = rng.standard_normal((7, 3)), rng.uniform(-1, 1, (7, 2))
    y, w = rng.standard_normal(7), rng.uniform(0.1, 1, 7)
    _, _, g = sac.critic_loss_and_grads(q, obs, act, y, w)
    numeric = _fd_tree(lambda p: sac.critic_loss_and_grads(p, obs, act, y, w)[0], q)
    assert _rel_err(g, numeric) < 1e-6


def test_sac_actor_gradients_match_finite_differences():
    rng = np.random.default_rng(13)
    actor = _small(rng, 3, 4)
    q1, q2 = _small(rng, 5, 1), _small(rng, 5, 1)
    obs, noise = rng.standard_normal((6, 3)), rng.standard_normal((6, 2))
    _, _, g = sac.actor_loss_and_grads(actor, q1, q2, obs, noise, 0.3)
    numeric = _fd_tree(lambda p: sac.actor_loss_and_grads(p, q1, q2, obs, noise, 0.3)[0], actor)
    assert _rel_err(g, numeric) < 1e-6


# ---------------------------------------------------------------------------
# PPO update contracts


def test_ppo_clip_zero_gives_zero_policy_gradient():
    rng = np.random.default_rng(14)
    actor, critic = _small(rng, 3, 2, "categorical"), _small(rng, 3, 1)
    obs = rng.standard_normal((8, 3))
    actions = rng.integers(2, size=8)
    logp, _ = ppo.log_prob_entropy(nn.forward(actor, obs), actions, True)
    mb = {"obs": obs, "actions": actions, "logp_old": logp, "advantages": rng.uniform(0.1, 2, 8),
          "returns": np.zeros(8), "values_old": np.zeros(8)}
    _, grads = ppo.loss_and_grads({"actor": actor, "critic": critic}, mb, 0.0, 0.0, 0.5, 0.0, True)
    assert all(not np.any(a) for _, a in nn.tree_leaves(grads["actor"]))


def test_normalize_constant_advantages_gives_zeros():
    out = ppo.normalize_advantages(np.full(16, 0.1))
    assert np.array_equal(out, np.zeros(16))


def test_ppo_update_raises_better_action_probability():
    rng = np.random.default_rng(15)
    actor, critic = _small(rng, 2, 2, "categorical"), _small(rng, 2, 1)
    obs = np.repeat(np.eye(2), 8, axis=0)  # two states
    actions = np.tile([0, 1], 8)
    adv = np.where(actions == 1, 1.0, -1.0)  # action 1 is better in both states
    logp, _ = ppo.log_prob_entropy(nn.forward(actor, obs), actions, True)
    mb = {"obs": obs, "actions": actions, "logp_old": logp, "advantages": adv,
          "returns": np.zeros(16), "values_old": np.zeros(16)}
    nets = {"actor": actor, "critic": critic}
    before = np.exp(nn.forward(actor, np.eye(2)))[:, 1]
    _, grads = ppo.loss_and_grads(nets, mb, 0.2, 0.0, 0.5, 0.0, True)
    nets, _ = nn.adam_update(nets, grads, nn.adam_init(nets, lr=0.01))
    after = np.exp(nn.forward(nets["actor"], np.eye(2)))[:, 1]
    assert np.all(after > before)


# ---------------------------------------------------------------------------
# init / train / evaluate


def test_init_is_deterministic():
    a, b = algos.init("dqn", None, "cartpole", 0), algos.init("dqn", None, "cartpole", 0)
    assert _states_equal(a, b)


def test_init_rejects_mismatched_action_space():
    with pytest.raises(algos.AlgorithmError, match="sac requires continuous actions"):
        algos.init("sac", None, "cartpole", 0)
    with pytest.raises(algos.AlgorithmError, match="dqn requires discrete actions"):
        algos.init("dqn", None, "pendulum", 0)


def test_init_clamps_buffer_to_budget():
    cfg = algos.space_for("dqn", "cartpole").make({"buffer_size": 1_000_000})
    s = algos.init("dqn", cfg, "cartpole", 0)
    assert s.total_timesteps == 50_000 and s.buffer.capacity == 50_000


def test_small_request_consumes_one_vector_step():
    s = algos.init("ppo", None, "cartpole", 0)
    s, m = algos.train(s, 3)
    assert s.step == 8 and m.steps == 8
    with pytest.raises(algos.AlgorithmError):
        algos.train(s, 0)


RESUME_CASES = [("ppo", "cartpole", {}), ("ppo", "pendulum", {}),
                ("dqn", "cartpole", {"learning_starts": 200, "buffer_prio_sampling": True}),
                ("sac", "pendulum", {"learning_starts": 200, "batch_size": 256})]


@pytest.mark.parametrize("algo,env,overrides", RESUME_CASES)
def test_checkpoint_resume_is_bit_identical(tmp_path, algo, env, overrides):
    cfg = algos.space_for(algo, env).make(overrides)
    straight = algos.init(algo, cfg, env, 3)
    straight, _ = algos.train(straight, 1024)

    first = algos.init(algo, cfg, env, 3)
    first, _ = algos.train(first, 512)
    algos.save_checkpoint(first, tmp_path / "ck")
    del first
    resumed = algos.load_checkpoint(tmp_path / "ck")
    resumed, _ = algos.train(resumed, 512)
    assert _states_equal(straight, resumed)


def test_checkpoint_golden_round_trip(tmp_path):
    s = algos.init("dqn", {"learning_starts": 64, "batch_size": 64}, "cartpole", 1)
    s, _ = algos.train(s, 300)
    algos.save_checkpoint(s, tmp_path / "a")
    algos.save_checkpoint(algos.load_checkpoint(tmp_path / "a"), tmp_path / "b")
    names = sorted(os.listdir(tmp_path / "a"))
    assert names == sorted(os.listdir(tmp_path / "b"))
    match, mismatch, errors = filecmp.cmpfiles(tmp_path / "a", tmp_path / "b", names, shallow=False)
    assert not mismatch and not errors


def test_checkpoint_preserves_dtypes(tmp_path):
    tree = {"f": np.arange(6.0).reshape(2, 3) / 7, "i": np.array([-3, 2**40]), "b": np.array([True, False]),
            "nested": [{"x": 1.5, "s": "txt", "n": None}], "big": 2**100}
    save_tree(tmp_path / "t", tree)
    back, manifest = load_tree(tmp_path / "t")
    assert back["f"].dtype == np.float64 and np.array_equal(back["f"], tree["f"])
    assert back["i"].dtype == np.int64 and np.array_equal(back["i"], tree["i"])
    assert back["b"].dtype == np.bool_ and np.array_equal(back["b"], tree["b"])
    assert back["nested"] == tree["nested"] and back["big"] == 2**100
    raw = (tmp_path / "t" / manifest["arrays"]["f"]["file"]).read_bytes()
    assert raw == tree["f"].astype("<f8").tobytes()


def test_different_seeds_differ():
    a, _ = algos.train(algos.init("ppo", None, "cartpole", 0), 512)
    b, _ = algos.train(algos.init("ppo", None, "cartpole", 1), 512)
    assert not _leaves_equal(a.nets, b.nets)


def test_untrained_ppo_cartpole_return_range():
    s = algos.init("ppo", None, "cartpole", 0)
    r = algos.evaluate(s, 128, 7)
    assert 8 <= r <= 40
    assert algos.evaluate(s, 128, 7) == r


def test_gridworld_evaluation_in_unit_interval():
    s = algos.init("ppo", None, "gridworld-empty-random", 0)
    assert 0.0 <= algos.evaluate(s, 16, 0) <= 1.0


def test_exploding_returns_signal_divergence():
    s = algos.init("ppo", None, "cartpole", 0)
    s.running_return[:] = 2e9
    with pytest.raises(algos.TrainingDiverged) as info:
        algos.train(s, 8)
    assert isinstance(info.value.metrics, algos.Metrics)


def test_non_finite_parameters_signal_divergence():
    s = algos.init("dqn", {"learning_starts": 64, "batch_size": 64}, "cartpole", 0)
    s, _ = algos.train(s, 100)
    s.nets["q"].weights[-1][:] = np.inf
    with pytest.raises(algos.TrainingDiverged):
        algos.train(s, 10)


def test_apply_config_changes_learning_rate_and_rejects_structure():
    s = algos.init("dqn", None, "cartpole", 0)
    s = algos.apply_config(s, s.config.replace(learning_rate=0.01, buffer_size=2048))
    assert s.opts["q"].lr == 0.01 and s.buffer.capacity == 2048
    with pytest.raises(algos.AlgorithmError, match="use_target_network"):
        algos.apply_config(s, algos.space_for("dqn", "cartpole").make(
            {**s.config.values, "use_target_network": False}))


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 64), st.integers(1, 64))
def test_split_training_equals_joint_training(a, b):
    joint, _ = algos.train(algos.init("ppo", None, "cartpole", 5), (a + b) * 8)
    split = algos.init("ppo", None, "cartpole", 5)
    split, _ = algos.train(split, a * 8)
    split, _ = algos.train(split, b * 8)
    assert _states_equal(joint, split)
