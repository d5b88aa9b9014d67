import filecmp
import json
import os
import shutil

import numpy as np
import pytest

from autorl_bench import algos
from autorl_bench.algos import CheckpointError
from autorl_bench.autorl_env import AutoRLEnvConfig, SessionError, reset, state_checksum
from autorl_bench.seeding import derive_seed, make_rng

TOTAL = 2048


def ppo_cfg(mode="dynamic", **kw):
    return AutoRLEnvConfig("ppo", "cartpole", total_budget=kw.pop("total_budget", TOTAL), mode=mode,
                           n_eval_episodes=kw.pop("n_eval_episodes", 8), **kw)


def test_zero_total_budget_rejected():
    with pytest.raises(SessionError):
        reset(ppo_cfg(total_budget=0), 0)


def test_bad_mode_and_pairs_rejected():
    with pytest.raises(SessionError):
        reset(ppo_cfg(mode="online"), 0)
    with pytest.raises(SessionError, match="sac requires continuous"):
        reset(AutoRLEnvConfig("sac", "cartpole"), 0)
    with pytest.raises(SessionError, match="checkpointing"):
        reset(ppo_cfg(checkpointing=False), 0)


def test_registry_budget_is_the_default_total():
    s = reset(AutoRLEnvConfig("dqn", "cartpole"), 0)
    assert s.cfg.total_budget == 50_000


def test_same_seed_same_objective_stream():
    streams = []
    for _ in range(2):
        with reset(ppo_cfg(), 3) as s:
            lam = s.space.default()
            streams.append([s.step(lam, 512).objectives["mean_return"],
                            s.step(lam.replace(learning_rate=1e-3), 512).objectives["mean_return"]])
    assert streams[0] == streams[1]


def test_static_steps_restart_from_scratch():
    s = reset(ppo_cfg("static"), 0)
    lam = s.space.default()
    s.step(lam, 512)
    s.step(lam.replace(learning_rate=1e-4), 256)
    assert s.state.step == 256  # fresh state, counter restarted
    assert s.consumed == 768
    assert [r["cumulative_steps"] for r in s.log] == [512, 768]


def test_static_full_budget_matches_direct_training():
    s = reset(ppo_cfg("static"), 5)
    lam = s.space.default()
    r = s.step(lam, TOTAL)
    st = algos.init("ppo", lam, "cartpole", 5, TOTAL)
    algos.train(st, TOTAL)
    assert r.objectives["mean_return"] == algos.evaluate(st, 8, derive_seed(5, "eval"))
    assert state_checksum(st) == s.checksum()


def test_dynamic_halves_equal_static_whole():
    with reset(ppo_cfg(), 1) as d:
        lam = d.space.default()
        d.step(lam, TOTAL // 2)
        r_dyn = d.step(lam, TOTAL // 2)
        dyn_sum = d.checksum()
    s = reset(ppo_cfg("static"), 1)
    r_st = s.step(lam, TOTAL)
    assert r_dyn.objectives["mean_return"] == r_st.objectives["mean_return"]
    assert dyn_sum == s.checksum()


def test_dynamic_lr_change_alters_training():
    sums = []
    for lr in (3e-3, 3e-4):
        with reset(ppo_cfg(), 2) as d:
            lam = d.space.default()
            d.step(lam, 1024)
            before = d.checksum()
            d.step(lam.replace(learning_rate=lr), 1024)
            sums.append((before, d.checksum()))
    assert sums[0][0] == sums[1][0]
    assert sums[0][1] != sums[1][1]


def test_structural_hot_swap_rejected():
    cfg = AutoRLEnvConfig("dqn", "cartpole", total_budget=400, mode="dynamic", n_eval_episodes=2)
    with reset(cfg, 0) as d:
        lam = d.space.default().replace(learning_starts=100)
        d.step(lam, 100)
        with pytest.raises(SessionError, match="use_target_network"):
            swapped = {k: v for k, v in lam.values.items() if k != "target_update_interval"}
            d.step({**swapped, "use_target_network": False}, 100)


def test_checkpoint_restore_round_trip():
    with reset(ppo_cfg(), 4) as d:
        lam = d.space.default()
        d.step(lam, 512)
        cid = d.checkpoint("mid")
        r1 = d.step(lam, 512)
        sum1 = d.checksum()
        d.restore(cid)
        assert d.consumed == 512
        r2 = d.step(lam, 512)
        assert r1.objectives["mean_return"] == r2.objectives["mean_return"]
        assert d.checksum() == sum1


def test_duplicate_is_isolated(tmp_path):
    with reset(ppo_cfg(checkpoint_dir=tmp_path / "s"), 4) as d:
        lam = d.space.default()
        d.step(lam, 512)
        cid = d.checkpoint()
        dup = d.duplicate(cid)
        assert dup != cid
        snapshot = tmp_path / "snap"
        shutil.copytree(d.checkpoint_path(cid), snapshot)

        d.restore(cid)
        d.step(lam, 512)
        a = d.checksum()
        d.restore(dup)
        d.state.rngs["action"] = make_rng(99, "other-exploration")
        d.step(lam, 512)
        b = d.checksum()
        assert a != b
        cmp = filecmp.dircmp(snapshot, d.checkpoint_path(cid))
        assert not cmp.diff_files and not cmp.left_only and not cmp.right_only
        d.restore(cid)
        d.step(lam, 512)
        assert d.checksum() == a


def test_corrupted_checkpoint_names_missing_array():
    with reset(ppo_cfg(), 0) as d:
        d.step(d.space.default(), 256)
        path = d.checkpoint_path(d.checkpoint())
        manifest = json.loads((path / "manifest.json").read_text())
        name, info = next(iter(manifest["arrays"].items()))
        os.remove(path / info["file"])
        with pytest.raises(CheckpointError, match=name.replace(".", r"\.")):
            d.restore(path.name)


def test_checkpoint_errors():
    s = reset(ppo_cfg("static"), 0)
    s.step(s.space.default(), 256)
    with pytest.raises(SessionError, match="dynamic"):
        s.checkpoint()
    with reset(ppo_cfg(), 0) as d:
        with pytest.raises(SessionError):
            d.checkpoint()  # nothing trained yet
        d.step(d.space.default(), 256)
        with pytest.raises(SessionError, match="unknown checkpoint"):
            d.restore("nope")


def test_budget_overrun_and_accounting():
    with reset(ppo_cfg(), 0) as d:
        lam = d.space.default()
        total = 0
        for b in (100, 700, 1000):
            r = d.step(lam, b)
            total += r.steps
            assert r.steps % 8 == 0 and r.steps >= b
        assert d.consumed == total == d.state.step
        with pytest.raises(SessionError, match="overrun"):
            d.step(lam, TOTAL)


def test_lockfile_blocks_a_second_session(tmp_path):
    a = reset(ppo_cfg(checkpoint_dir=tmp_path), 0)
    with pytest.raises(SessionError, match="in use"):
        reset(ppo_cfg(checkpoint_dir=tmp_path), 1)
    a.close()
    b = reset(ppo_cfg(checkpoint_dir=tmp_path), 1)
    b.close()


def test_state_features_do_not_change_objectives():
    out = []
    for feats in ((), ("grad_norm_mean", "grad_norm_var", "loss_mean")):
        with reset(ppo_cfg(state_features=feats), 7) as d:
            r = d.step(d.space.default(), 1024)
            out.append((r.objectives["mean_return"], d.checksum(), r.features))
    assert out[0][:2] == out[1][:2]
    assert out[0][2] == {}
    assert out[1][2]["grad_norm_var"] >= 0


def test_empty_slice_features_are_null():
    cfg = AutoRLEnvConfig("dqn", "cartpole", total_budget=1000, mode="static", n_eval_episodes=2)
    s = reset(cfg, 0)
    r = s.step(s.space.default().replace(learning_starts=2000), 200)
    assert r.features == {"grad_norm_mean": None, "grad_norm_var": None, "loss_mean": None}


def test_divergence_returns_floor_sentinel():
    cfg = AutoRLEnvConfig("sac", "pendulum", total_budget=600, mode="dynamic", n_eval_episodes=2)
    with reset(cfg, 0) as d:
        lam = d.space.default().replace(learning_starts=100, batch_size=256)
        d.step(lam, 50)
        d.state.running_return[:] = 2e9
        r = d.step(lam, 50)
        assert r.diverged and r.objectives["mean_return"] == -1700.0
        r = d.step(lam, 50)
        assert r.diverged  # stays diverged, no exception


def test_sixteen_change_schedule_is_deterministic(tmp_path):
    lrs = np.geomspace(1e-4, 1e-2, 16)
    runs = []
    for k in range(2):
        # one PPO rollout (8 envs x 32 steps) per slice so every slice updates
        cfg = ppo_cfg(total_budget=16 * 256, n_eval_episodes=2, checkpoint_dir=tmp_path / str(k))
        with reset(cfg, 11) as d:
            lam = d.space.default()
            cum, sums = [], []
            for lr in lrs:
                r = d.step(lam.replace(learning_rate=float(lr)), 256)
                cum.append(r.cumulative_steps)
                sums.append(d.checksum())
            runs.append((cum, sums))
            assert (tmp_path / str(k) / "session_log.csv").read_text().count("\n") == 17
    cum, sums = runs[0]
    assert cum == [256 * (i + 1) for i in range(16)]
    assert runs[0] == runs[1]
    assert len(set(sums)) == 16
