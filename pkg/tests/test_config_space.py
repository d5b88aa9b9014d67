import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from autorl_bench import config_space as cs
from autorl_bench.config_space import ConfigurationSpace, HyperparameterDef

PAIRS = [("ppo", "classic-control"), ("ppo", "gridworld"), ("dqn", "classic-control"),
         ("dqn", "gridworld"), ("sac", "classic-control")]

# first 8 points of the unscrambled 2-D base-2 Sobol sequence (origin excluded),
# worked out by hand from the first two direction-number columns
SOBOL_2D = [(0.5, 0.5), (0.75, 0.25), (0.25, 0.75), (0.375, 0.375),
            (0.875, 0.875), (0.625, 0.125), (0.125, 0.625), (0.1875, 0.3125)]


def _gray_sobol_2d(n):
    """Independent Gray-code construction from explicit direction numbers."""
    bits = 32
    v1 = [1 << (bits - 1 - i) for i in range(bits)]  # first dimension: van der Corput
    # second dimension: primitive polynomial x + 1, m_1 = 1, so v_i = v_{i-1} ^ (v_{i-1} >> 1)
    v2 = [1 << (bits - 1)]
    for i in range(1, bits):
        v2.append(v2[i - 1] ^ (v2[i - 1] >> 1))
    x1 = x2 = 0
    out = []
    for k in range(1, n + 1):
        c = (~(k - 1) & k).bit_length() - 1  # lowest zero bit of k - 1
        x1 ^= v1[c]
        x2 ^= v2[c]
        out.append((x1 / 2**bits, x2 / 2**bits))
    return out


def test_sobol_first_points_exact():
    pts = cs.sobol_points(8, 2, seed=0)
    assert [tuple(p) for p in pts.tolist()] == SOBOL_2D
    assert _gray_sobol_2d(8) == SOBOL_2D


def test_sobol_matches_gray_code_oracle_longer():
    assert [tuple(p) for p in cs.sobol_points(200, 2).tolist()] == _gray_sobol_2d(200)


def test_sobol_dimension_limit():
    cs.sobol_points(4, 64)
    with pytest.raises(cs.SpaceError, match="limit"):
        cs.sobol_points(4, cs.MAX_SOBOL_DIM + 1)


@pytest.mark.parametrize("seed", [0, 7])
def test_sobol_one_dimensional_gaps(seed):
    n = 256
    pts = cs.sobol_points(n, 13, seed)
    for j in range(13):
        x = np.sort(np.concatenate([[0.0], pts[:, j], [1.0]]))
        assert np.max(np.diff(x)) < 3 / n


def test_sobol_deterministic_and_seeded():
    space = cs.builtin_space("ppo", "classic-control")
    a = cs.sobol_sample(space, 32, 5)
    assert a == cs.sobol_sample(space, 32, 5)
    assert a != cs.sobol_sample(space, 32, 6)


def test_ppo_gridworld_rows():
    space = cs.builtin_space("ppo", "gridworld")
    assert space["batch_size"].choices == (32, 64, 128)
    lr = space["learning_rate"]
    assert (lr.kind, lr.lo, lr.hi, lr.scale) == ("float", 1e-6, 1e-1, "log10")
    assert (space["gae_lambda"].lo, space["gae_lambda"].hi) == (0.8, 0.9999)
    assert space.fixed["update_epochs"] == 10 and space.fixed["n_envs"] == 8
    assert space.dim == 9


def test_dqn_classic_conditionals():
    space = cs.builtin_space("dqn", "classic-control")
    tui = space["target_update_interval"]
    assert (tui.kind, tui.lo, tui.hi, tui.condition) == ("int", 1, 2000, ("use_target_network", True))
    for name in ("buffer_alpha", "buffer_beta", "buffer_epsilon"):
        assert space[name].condition == ("buffer_prio_sampling", True)
    assert space["batch_size"].choices == (64, 128, 256)
    assert space.fixed["n_envs"] == 1
    assert space.dim == 12


def test_sac_rows():
    space = cs.builtin_space("sac", "classic-control")
    assert (space["tau"].lo, space["tau"].hi, space["tau"].condition) == (0.01, 1.0, ("use_target_network", True))
    rs = space["reward_scale"]
    assert (rs.lo, rs.hi, rs.scale) == (0.1, 10.0, "log10")
    assert space["batch_size"].choices == (256, 512, 1024)
    assert space.dim == 11
    with pytest.raises(cs.SpaceError, match="continuous"):
        cs.builtin_space("sac", "gridworld")


def test_unit_mapping_examples():
    lr = HyperparameterDef("lr", "float", 1e-6, 1e-1, "log10")
    assert lr.from_unit(0.5) == pytest.approx(10 ** -3.5, rel=1e-12)
    b = HyperparameterDef("b", "categorical", choices=(32, 64, 128))
    assert b.from_unit(0.0) == 32 and b.from_unit(np.nextafter(1.0, 0.0)) == 128 and b.from_unit(1.0) == 128
    i = HyperparameterDef("i", "int", 1, 2000)
    assert i.from_unit(0.0) == 1 and i.from_unit(1.0) == 2000


def test_from_unit_dimension_mismatch():
    space = cs.builtin_space("ppo", "classic-control")
    with pytest.raises(cs.SpaceError):
        cs.from_unit(space, np.zeros(3))


@settings(max_examples=200, deadline=None)
@given(st.sampled_from(PAIRS), st.data())
def test_unit_round_trip(pair, data):
    space = cs.builtin_space(*pair)
    u = np.array(data.draw(st.lists(st.floats(0, 1), min_size=space.dim, max_size=space.dim)))
    cfg = cs.from_unit(space, u)
    back = cs.from_unit(space, cs.to_unit(space, cfg))
    assert back.values.keys() == cfg.values.keys()
    for k, v in cfg.values.items():
        if isinstance(v, float):
            assert back[k] == pytest.approx(v, rel=1e-12, abs=1e-15)
        else:
            assert back[k] == v


@pytest.mark.parametrize("pair", PAIRS)
def test_sobol_samples_valid_and_conditional(pair):
    space = cs.builtin_space(*pair)
    for cfg in cs.sobol_sample(space, 256, 0):
        assert cs.validate(space, cfg) == []


def test_conditional_integrity_random_samples():
    rng = np.random.default_rng(0)
    for pair in PAIRS:
        space = cs.builtin_space(*pair)
        bad = sum(1 for c in cs.random_sample(space, 2000, rng) if cs.validate(space, c))
        assert bad == 0


def test_validate_reports_all_violations():
    space = cs.builtin_space("sac", "classic-control")
    cfg = space.default().replace(learning_rate=1e-7, use_target_network=False)
    problems = cs.validate(space, cfg)
    assert any("learning_rate" in p and "out of range" in p for p in problems)
    assert any("tau" in p and "inactive hyperparameter set" in p for p in problems)
    assert len(problems) == 2


@pytest.mark.parametrize("pair", PAIRS)
def test_defaults_valid(pair):
    space = cs.builtin_space(*pair)
    assert cs.validate(space, space.default()) == []


def test_buffer_size_clamp():
    space = cs.builtin_space("dqn", "classic-control")
    cfg = space.default().replace(buffer_size=1_000_000)
    assert cs.buffer_size_clamp(space, cfg, 50_000)["buffer_size"] == 50_000
    assert cs.buffer_size_clamp(space, cfg.replace(buffer_size=2048), 1_000_000)["buffer_size"] == 2048
    assert cs.buffer_size_clamp(space, cfg, 512)["buffer_size"] == 512


@pytest.mark.parametrize("pair", PAIRS)
def test_yaml_round_trip(pair):
    space = cs.builtin_space(*pair)
    again = ConfigurationSpace.from_yaml(space.to_yaml())
    assert again == space
    assert cs.sobol_sample(again, 16) == cs.sobol_sample(space, 16)


def test_space_definition_errors():
    with pytest.raises(cs.SpaceError):
        HyperparameterDef("x", "float", 1.0, 1.0)
    with pytest.raises(cs.SpaceError):
        HyperparameterDef("x", "float", 0.0, 1.0, "log10")
    with pytest.raises(cs.SpaceError, match="does not exist"):
        ConfigurationSpace("s", (HyperparameterDef("x", "int", 0, 3, condition=("y", 1)),))
    with pytest.raises(cs.SpaceError, match="cyclic"):
        ConfigurationSpace("s", (
            HyperparameterDef("x", "int", 0, 3, condition=("y", 1)),
            HyperparameterDef("y", "int", 0, 3, condition=("x", 1)),
        ))
    with pytest.raises(cs.SpaceError, match="duplicate"):
        ConfigurationSpace("s", (HyperparameterDef("x", "int", 0, 3), HyperparameterDef("x", "int", 0, 3)))


def test_nested_conditions_topologically_sorted():
    space = ConfigurationSpace("s", (
        HyperparameterDef("c", "int", 0, 3, condition=("b", True)),
        HyperparameterDef("b", "boolean", condition=("a", 1)),
        HyperparameterDef("a", "int", 0, 1),
    ))
    assert space.names == ["a", "b", "c"]
    assert space.active_names({"a": 0, "b": True, "c": 1}) == {"a"}
    assert space.active_names({"a": 1, "b": True, "c": 1}) == {"a", "b", "c"}
