import csv
import io
import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from autorl_bench import envs
from autorl_bench.envs import gridworld

NAMES = [s.name for s in envs.registered_envs()]


def _random_actions(spec, rng, n):
    sp = spec.action_space
    if sp.is_discrete:
        return rng.integers(sp.n, size=n)
    return rng.uniform(sp.low, sp.high, size=(n, sp.dim))


def _rollout(env, steps, action_seed=0):
    rng = np.random.default_rng(action_seed)
    out = []
    for _ in range(steps):
        o, r, te, tr, info = env.step(_random_actions(env.spec, rng, env.n_envs))
        out.append((o.copy(), r.copy(), te.copy(), tr.copy(), info["final_obs"].copy()))
    return out


def test_registry_contents_and_order():
    assert NAMES == [
        "cartpole", "mountaincar", "acrobot", "pendulum", "mountaincar-continuous",
        "gridworld-empty-random-5x5", "gridworld-doorkey-5x5", "gridworld-fourrooms", "gridworld-unlock",
    ]
    assert envs.get_spec("cartpole").action_space == envs.Space.discrete(2)
    assert envs.get_spec("pendulum").action_space == envs.Space.box([-2.0], [2.0])
    assert envs.get_spec("gridworld-empty-random").name == "gridworld-empty-random-5x5"


def test_unknown_env_lists_registered():
    with pytest.raises(envs.EnvError, match="cartpole"):
        envs.make("no-such-env", 1, 0)


def test_csv_rows_round_trip():
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=envs.CSV_COLUMNS)
    w.writeheader()
    w.writerows(envs.env_csv_rows())
    rows = list(csv.DictReader(io.StringIO(buf.getvalue())))
    for row, spec in zip(rows, envs.registered_envs()):
        assert row["name"] == spec.name
        assert int(row["obs_dim"]) == spec.observation_space.dim
        assert row["action_kind"] == spec.action_space.kind
        assert int(row["action_dim"]) == spec.action_space.dim
        assert int(row["max_episode_steps"]) == spec.max_episode_steps
        assert int(row["default_timesteps"]) == spec.default_timesteps


@pytest.mark.parametrize("name", NAMES)
def test_make_is_deterministic(name):
    a, b = envs.make(name, 4, 0), envs.make(name, 4, 0)
    assert np.array_equal(a.obs, b.obs)
    for x, y in zip(_rollout(a, 150), _rollout(b, 150)):
        for u, v in zip(x, y):
            assert np.array_equal(u, v)


def test_cartpole_reset_bounds():
    for s in range(200):
        obs = envs.make("cartpole", 1, s).obs
        assert np.all(np.abs(obs) <= 0.05)


def test_empty_random_agent_uniform_goal_fixed():
    counts = Counter()
    n = 10_000
    for s in range(n):
        env = envs.make("gridworld-empty-random", 1, s)
        assert env.grid[0, 3, 3] == gridworld.GOAL
        counts[tuple(env.agent[0])] += 1
    free = [(r, c) for r in range(1, 4) for c in range(1, 4) if (r, c) != (3, 3)]
    assert set(counts) == set(free)
    expected = n / len(free)
    chi2 = sum((counts[c] - expected) ** 2 / expected for c in free)
    assert chi2 < 24.32  # chi^2_{0.999}, 7 dof


def test_cartpole_termination_pays_one():
    env = envs.make("cartpole", 1, 0)
    env.s[0] = (0.0, 0.0, 0.2, 2.0)  # pole already near 12 degrees and falling
    _, r, te, tr, info = env.step([1])
    assert abs(info["final_obs"][0, 2]) > 12 * 2 * math.pi / 360
    assert te[0] and not tr[0] and r[0] == 1.0
    assert np.all(np.abs(env.obs) <= 0.05)  # auto-reset happened


def test_pendulum_truncates_at_200_and_never_terminates():
    env = envs.make("pendulum", 2, 3)
    for k in range(1, 401):
        _, r, te, tr, _ = env.step(np.zeros((2, 1)))
        assert not te.any()
        assert tr.all() == (k % 200 == 0)
        assert np.all(r <= 0.0) and np.all(r >= -16.2736)


def test_action_error_names_index():
    env = envs.make("cartpole", 3, 0)
    with pytest.raises(envs.ActionError, match="env 1"):
        env.step([0, 2, 1])
    env = envs.make("pendulum", 2, 0)
    with pytest.raises(envs.ActionError, match="env 0"):
        env.step([[3.0], [0.0]])
    with pytest.raises(envs.EnvError):
        env.step([[0.0]])


@pytest.mark.parametrize("name", NAMES)
def test_vectorization_equivalence(name):
    seeds = [11, 22, 33]
    vec = envs.make_from_seeds(name, seeds)
    singles = [envs.make_from_seeds(name, [s]) for s in seeds]
    rng = np.random.default_rng(5)
    for _ in range(120):
        a = _random_actions(vec.spec, rng, 3)
        o, r, te, tr, info = vec.step(a)
        for i, env in enumerate(singles):
            oi, ri, tei, tri, infoi = env.step(a[i:i + 1])
            assert np.array_equal(o[i], oi[0])
            assert r[i] == ri[0] and te[i] == tei[0] and tr[i] == tri[0]
            assert np.array_equal(info["final_obs"][i], infoi["final_obs"][0])


@pytest.mark.parametrize("name", NAMES)
def test_reward_bounds_and_flags(name):
    env = envs.make(name, 4, 1)
    spec = env.spec
    returns = np.zeros(4)
    for o, r, te, tr, fo in _rollout(env, 700, action_seed=2):
        assert not np.any(te & tr)
        if name == "cartpole":
            assert np.all(r == 1.0)
        if spec.domain == "gridworld":
            returns += r
            assert np.all((returns >= 0) & (returns <= 1))
            assert np.all(r[r > 0] > 0) and np.all(te == (r > 0))
            returns[te | tr] = 0.0


@pytest.mark.parametrize("name", NAMES)
def test_state_dict_round_trip(name):
    env = envs.make(name, 3, 4)
    _rollout(env, 37)
    state = env.state_dict()
    clone = envs.make(name, 3, 999)
    clone.load_state_dict(state)
    assert np.array_equal(env.obs, clone.obs)
    for x, y in zip(_rollout(env, 80, 9), _rollout(clone, 80, 9)):
        for u, v in zip(x, y):
            assert np.array_equal(u, v)


def test_gridworld_goal_reward_value():
    env = envs.make("gridworld-empty-random", 1, 0)
    env.agent[0] = (3, 2)
    env.direction[0] = 0  # east, facing the goal
    env.t[0] = 9
    _, r, te, tr, _ = env.step([0])
    assert te[0] and r[0] == pytest.approx(1 - 0.9 * 10 / 100)


def test_doorkey_is_solvable_by_script():
    env = envs.make("gridworld-doorkey-5x5", 1, 0)
    g = env.grid[0]
    door_row = int(np.flatnonzero(g[:, 2] == gridworld.DOOR_LOCKED)[0])
    key_row = int(np.flatnonzero(g[:, 1] == gridworld.KEY)[0])
    # stand next to the key facing it
    env.agent[0] = (key_row + 1, 1) if key_row < 3 else (key_row - 1, 1)
    env.direction[0] = 3 if key_row < 3 else 1
    env.step([3])
    assert env.carrying[0] == 1
    env.agent[0] = (door_row, 1)
    env.direction[0] = 0
    env.step([5])
    assert env.grid[0, door_row, 2] == gridworld.DOOR_OPEN
    env.step([0])  # into the doorway
    rewards = []
    if door_row != 3:
        env.step([0])  # to column 3
        env.direction[0] = 1 if door_row < 3 else 3
        for _ in range(abs(3 - door_row)):
            _, r, te, _, _ = env.step([0])
            rewards.append(r[0])
    else:
        _, r, te, _, _ = env.step([0])
        rewards.append(r[0])
    assert te[0] and rewards[-1] > 0 and sum(rewards[:-1]) == 0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**63 - 1), st.sampled_from(NAMES))
def test_identical_states_identical_successors(seed, name):
    a, b = envs.make(name, 2, seed), envs.make(name, 2, seed)
    rng = np.random.default_rng(seed % 1000)
    for _ in range(20):
        act = _random_actions(a.spec, rng, 2)
        oa, ra, *_ = a.step(act)
        ob, rb, *_ = b.step(act)
        assert np.array_equal(oa, ob) and np.array_equal(ra, rb)
