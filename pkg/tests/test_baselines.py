import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import make_world
from neifi import policy as pn
from neifi.baselines import (
    BaselineKind,
    cnr_topology,
    draw_pressured,
    gp_step,
    hierarchical_wrap,
    pwa_weights,
    run_baseline_episode,
    run_episode,
    subgroup_means,
)
from neifi.config import Architecture
from neifi.dynamics import init_world, neighbor_matrix
from neifi.presets import get_preset


def test_baseline_kind_defaults():
    gp = BaselineKind("gp")
    assert gp.gp_pressure_level == 0.5 and gp.gp_pressured_fraction == 0.5
    assert BaselineKind("cnr").cnr_long_range_count == 1
    with pytest.raises(ValueError):
        BaselineKind("xyz")
    with pytest.raises(ValueError):
        BaselineKind("gp", gp_pressure_level=1.5)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 8, allow_nan=False), min_size=1, max_size=30))
def test_pwa_weights_are_distributions(xs):
    w = make_world(xs, x_min=0.0, x_max=8.0)
    W = pwa_weights(w)
    adj = neighbor_matrix(w)
    assert np.all(W >= 0)
    assert np.all(W[~adj] == 0)
    for i in range(w.m):
        if adj[i].any():
            assert abs(W[i].sum() - 1) <= 1e-12


def test_pwa_equidistant_is_uniform():
    # neighbors at equal distance from the population mean 2.0
    w = make_world([2.0, 1.5, 2.5], x_min=0.0, x_max=4.0)
    np.testing.assert_allclose(pwa_weights(w)[0], [0, 0.5, 0.5])


def test_gp_pressured_set_size():
    rng = np.random.default_rng(0)
    for m in (1, 5, 20, 40):
        assert draw_pressured(m, 0.5, rng).sum() == round(0.5 * m)


def test_gp_fixed_point_at_group_mean():
    w = make_world([1.0, 2.0, 3.0], expert_x=[2.0], expert_phi=1.0, x_min=0.0, x_max=4.0, global_goal=2.0)
    np.testing.assert_allclose(subgroup_means(w), 2.0)
    pressured = np.array([False, True, False])
    new = gp_step(w, pressured)
    # agent 1 has no neighbors (distance 1 is outside r_c) and sits at the group mean
    assert new[1] == 2.0
    before = gp_step(w, pressured, BaselineKind("gp", gp_after_stubbornness=False))
    assert before[1] == 2.0


def test_gp_pulls_toward_group_mean():
    w = make_world([0.0, 0.5, 4.0], expert_x=[2.0], expert_phi=1.0, x_min=0.0, x_max=4.0, global_goal=2.0, phi=0.5)
    new = gp_step(w, np.array([True, False, False]))
    plain = 0.5 * 0.0 + 0.5 * 0.5
    assert new[0] == pytest.approx(0.5 * plain + 0.5 * (4.5 / 3))


def test_cnr_adds_outside_channels():
    w = make_world([0.0, 0.5, 3.0], x_min=0.0, x_max=4.0)
    topo = cnr_topology(w, np.random.default_rng(0))
    assert topo[0, 2] == 1 and topo[1, 2] == 1  # the only outside agent
    assert topo[0, 1] == 1
    assert topo[2].sum() == 1
    full = make_world([1.0, 1.2, 1.4], x_min=0.0, x_max=4.0)
    np.testing.assert_array_equal(cnr_topology(full, np.random.default_rng(0)), neighbor_matrix(full))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), count=st.integers(0, 3))
def test_cnr_outside_count(seed, count):
    rng = np.random.default_rng(seed)
    w = init_world(get_preset("table1-c").scenario, rng)
    adj = neighbor_matrix(w)
    extra = (cnr_topology(w, rng, count) != 0) & ~adj
    assert not extra.diagonal().any()
    assert np.all(extra.sum(axis=1) <= count)


@pytest.mark.parametrize("kind", ["pwa", "gp", "cnr", "bc"])
@pytest.mark.parametrize("preset", ["table1-c", "table2-a"])
def test_baselines_hull_and_determinism(kind, preset):
    cfg = get_preset(preset).scenario
    h1 = run_baseline_episode(init_world(cfg, np.random.default_rng(1)), BaselineKind(kind), np.random.default_rng(2))
    h2 = run_baseline_episode(init_world(cfg, np.random.default_rng(1)), BaselineKind(kind), np.random.default_rng(2))
    np.testing.assert_array_equal(h1[-1].x, h2[-1].x)
    for a, b in zip(h1, h1[1:]):
        ops, new = a.all_opinions(), b.all_opinions()
        assert new.min() >= ops.min() - 1e-12 and new.max() <= ops.max() + 1e-12
    assert h1[-1].k <= cfg.T


def test_hierarchical_wrap():
    cfg = get_preset("table2-a").scenario
    runner = hierarchical_wrap(BaselineKind("pwa"), cfg)
    hist = runner(init_world(cfg, np.random.default_rng(0)), rng=np.random.default_rng(0))
    assert hist[-1].k >= 1
    with pytest.raises(ValueError):
        hierarchical_wrap(BaselineKind("pwa"), cfg.with_(n_experts=0, expert_init_opinions=None, p=0.0, q=1.0))


def test_run_episode_dispatch():
    cfg = get_preset("table1-a").scenario.with_(T=5)
    w = init_world(cfg, np.random.default_rng(0))
    with pytest.raises(ValueError):
        run_episode(w, "hneifi", np.random.default_rng(0))
    with pytest.raises(ValueError):
        run_episode(w, "nope", np.random.default_rng(0))
    p = pn.init_params(Architecture(hdim=3, hlays=1), np.random.default_rng(0))
    assert run_episode(w, "hneifi", np.random.default_rng(0), params=p)[-1].k <= 5
