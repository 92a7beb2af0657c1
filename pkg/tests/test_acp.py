import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import make_world
from neifi import policy as pn
from neifi.acp import (
    AgentObservation,
    EpisodeTrace,
    StepRecord,
    acp_topology,
    build_observation,
    build_observations,
    compute_reward,
    compute_rewards,
    epsilon_schedule,
    policy_gradient,
    reinforce_update,
    rollout_episode,
    select_neighbors,
    train,
)
from neifi.config import Architecture, RewardParams, ScenarioConfig, TrainConfig
from neifi.dynamics import init_world, neighbor_matrix
from neifi.presets import get_preset

SMALL = Architecture(hdim=4, hlays=1)


def _obs(n):
    return AgentObservation(np.ones(n), np.ones(n), 1.0, 1.0, np.arange(10, 10 + n))


# ---------------------------------------------------------------------------
# Observations
# ---------------------------------------------------------------------------


def test_observation_ratios_and_clamp():
    # virtual expert at U = 2; agent 0 sits 0.05 from the goal
    w = make_world([2.05, 2.5, 1.5, 1.95], expert_x=[2.0], expert_phi=1.0, x_min=0.0, x_max=4.0, global_goal=2.0)
    obs = build_observation(w, 0, np.random.default_rng(0))
    assert obs.d_local == pytest.approx(0.05)
    by_id = dict(zip(obs.perm.tolist(), obs.o))
    assert by_id[1] == pytest.approx(0.5 / 0.1)
    assert by_id[2] == pytest.approx(0.5 / 0.1)
    assert by_id[3] == pytest.approx(0.05 / 0.1)
    rows = obs.rows()
    assert rows.shape == (3, 4)
    np.testing.assert_array_equal(rows[:, 2], obs.d_local)
    np.testing.assert_array_equal(rows[:, 3], obs.d_global)


def test_observation_zero_and_unit_ratio():
    w = make_world([1.0, 2.0, 3.0 - 1e-9, 0.5], expert_x=[2.0], expert_phi=1.0, x_min=0.0, x_max=4.0, global_goal=2.0, r_c=1.5)
    obs = build_observation(w, 0, np.random.default_rng(1))
    by_id = dict(zip(obs.perm.tolist(), obs.o))
    assert by_id[1] == 0.0  # neighbor at the local goal
    assert by_id[3] == pytest.approx(1.5)
    sym = make_world([1.6, 2.4], expert_x=[2.0], expert_phi=1.0, x_min=0.0, x_max=4.0, global_goal=2.0)
    assert build_observation(sym, 0, np.random.default_rng(0)).o[0] == 1.0


def test_observation_needs_expert():
    w = make_world([1.0, 1.2], x_max=4.0)
    with pytest.raises(ValueError):
        build_observation(w, 0, np.random.default_rng(0))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), m=st.integers(2, 30))
def test_permutation_bookkeeping(seed, m):
    rng = np.random.default_rng(seed)
    cfg = get_preset("table1-a").scenario.with_(m_nonexperts=m)
    w = init_world(cfg, rng)
    adj = neighbor_matrix(w)
    obs = build_observations(w, rng)
    assert set(obs) == {i for i in range(m) if adj[i].any()}
    d = np.abs(w.x - 2.0)
    for i, o in obs.items():
        assert sorted(o.perm.tolist()) == np.flatnonzero(adj[i]).tolist()
        # position j carries the features of neighbor perm[j]
        np.testing.assert_allclose(o.o, d[o.perm] / max(d[i], 0.1))
        inverse = np.argsort(o.perm)
        np.testing.assert_array_equal(o.perm[inverse], np.sort(o.perm))


# ---------------------------------------------------------------------------
# Actions
# ---------------------------------------------------------------------------


def test_mean_threshold_selection():
    rng = np.random.default_rng(0)
    probs = np.array([0.4, 0.3, 0.2, 0.1])
    action, kept = select_neighbors(_obs(4), probs, 0.0, rng)
    np.testing.assert_array_equal(action.kept_mask, [True, True, False, False])
    np.testing.assert_array_equal(kept, [10, 11])
    assert action.threshold == pytest.approx(0.25)
    assert not action.explored


def test_uniform_keeps_all():
    for n in (1, 3, 7, 10):
        action, kept = select_neighbors(_obs(n), np.full(n, 1.0 / n), 0.0, np.random.default_rng(0))
        assert action.kept_mask.all()


def test_exploration_flips_mask():
    probs = np.array([0.4, 0.3, 0.2, 0.1])
    action, kept = select_neighbors(_obs(4), probs, 1.0, np.random.default_rng(0))
    assert action.explored
    np.testing.assert_array_equal(action.kept_mask, [False, False, True, True])
    # a flipped uniform vector would drop everyone; the argmax position is kept
    action, kept = select_neighbors(_obs(3), np.full(3, 1 / 3), 1.0, np.random.default_rng(0))
    assert action.kept_mask.sum() == 1


def test_select_validates():
    with pytest.raises(ValueError):
        select_neighbors(_obs(3), np.ones(2) / 2, 0.0, np.random.default_rng(0))
    with pytest.raises(ValueError):
        select_neighbors(_obs(2), np.ones(2) / 2, 1.5, np.random.default_rng(0))


# ---------------------------------------------------------------------------
# Rewards
# ---------------------------------------------------------------------------


def _pair(x0, x1, expert=2.0, U=2.0):
    w0 = make_world([x0], expert_x=[expert], expert_phi=1.0, x_min=0.0, x_max=8.0, global_goal=U)
    w1 = make_world([x1], expert_x=[expert], expert_phi=1.0, x_min=0.0, x_max=8.0, global_goal=U, k=1)
    return w0, w1


def test_reward_examples():
    w0, w1 = _pair(3.0, 2.5, expert=2.0, U=6.0)
    assert compute_reward(0, w0, w1, RewardParams(mode="g1")) == pytest.approx(0.5)
    w0, w1 = _pair(2.1, 2.3, expert=2.0, U=6.0)
    assert compute_reward(0, w0, w1, RewardParams(mode="g1")) == pytest.approx(-0.2)
    w0, w1 = _pair(2.0, 2.0)
    assert compute_reward(0, w0, w1, RewardParams(mode="g1")) == 1.0
    assert compute_reward(0, w0, w1, RewardParams(mode="g2")) == 1.0
    assert compute_reward(0, w0, w1, RewardParams()) == 2.0


def test_reward_uses_goal_at_step_k():
    w0 = make_world([3.0], expert_x=[2.0], x_min=0.0, x_max=8.0, global_goal=6.0)
    w1 = make_world([2.5], expert_x=[2.5], x_min=0.0, x_max=8.0, global_goal=6.0, k=1)
    assert compute_reward(0, w0, w1, RewardParams(mode="g1")) == pytest.approx(0.5)


def test_reward_branch_continuity():
    for xi in (0.25, 0.5):
        rp = RewardParams(xi_local=xi, xi_global=xi)
        for d_next in np.linspace(0, 2, 41):
            below, above = [], []
            for d_now in (xi - 1e-9, xi):
                w0, w1 = _pair(2.0 + d_now, 2.0 + d_next)
                (below if d_now < xi else above).append(compute_rewards(w0, w1, rp)[0])
            assert below[0] == pytest.approx(above[0], abs=1e-6)
            assert above[0] == pytest.approx(2 * (xi - d_next) / xi)


@settings(max_examples=200, deadline=None)
@given(x0=st.floats(0, 8), x1=st.floats(0, 8), goal=st.floats(0, 8))
def test_reward_sign_semantics(x0, x1, goal):
    w0, w1 = _pair(x0, x1, expert=goal, U=goal)
    d0, d1 = abs(x0 - goal), abs(x1 - goal)
    g1 = compute_reward(0, w0, w1, RewardParams(mode="g1"))
    if d0 >= 0.25:
        assert (g1 >= 0) == (d1 <= d0)


# ---------------------------------------------------------------------------
# Episodes
# ---------------------------------------------------------------------------


def test_rollout_at_consensus_is_empty():
    w = make_world([2.0, 2.001, 2.002], expert_x=[2.0], expert_phi=1.0, x_min=0.0, x_max=4.0, global_goal=2.0)
    p = pn.init_params(SMALL, np.random.default_rng(0))
    trace = rollout_episode(w, p, 0.0, RewardParams(), np.random.default_rng(0))
    assert trace.horizon == 0
    assert all(len(e) == 0 for e in trace.entries)
    np.testing.assert_array_equal(trace.returns(), 0.0)


def test_full_exploration():
    cfg = get_preset("table1-a").scenario.with_(T=6)
    rng = np.random.default_rng(0)
    p = pn.init_params(SMALL, rng)
    trace = rollout_episode(init_world(cfg, rng), p, 1.0, RewardParams(), rng)
    steps = [s for agent in trace.entries for s in agent]
    assert steps and all(s.action.explored for s in steps)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), eps=st.sampled_from([0.0, 0.2, 1.0]), preset=st.sampled_from(["table1-a", "table2-a", "uneven"]))
def test_topology_legal_and_pruning_only(seed, eps, preset):
    rng = np.random.default_rng(seed)
    cfg = get_preset(preset).scenario.with_(T=10)
    p = pn.init_params(SMALL, rng)
    w = init_world(cfg, rng)
    topo, decisions = acp_topology(w, p, eps, rng)
    adj = neighbor_matrix(w)
    assert not topo.diagonal().any()
    assert np.all(adj[topo != 0])
    for i in range(w.m):
        assert topo[i].any() == adj[i].any() == (i in decisions)

    trace = rollout_episode(w, p, eps, RewardParams(), rng)
    states = {s.k: s for s in trace.history}
    for i, agent in enumerate(trace.entries):
        for step in agent:
            kept = step.observation.perm[step.action.kept_mask]
            assert kept.size >= 1
            assert np.all(neighbor_matrix(states[step.k])[i, kept])
    assert trace.horizon <= cfg.T
    if trace.final.k < cfg.T:
        assert np.ptp(trace.final.x) <= cfg.omega


def test_rollout_deterministic():
    cfg = get_preset("table2-a").scenario
    p = pn.init_params(SMALL, np.random.default_rng(0))
    a = rollout_episode(init_world(cfg, np.random.default_rng(5)), p, 0.1, RewardParams(), np.random.default_rng(6))
    b = rollout_episode(init_world(cfg, np.random.default_rng(5)), p, 0.1, RewardParams(), np.random.default_rng(6))
    np.testing.assert_array_equal(a.final.x, b.final.x)
    np.testing.assert_array_equal(a.returns(), b.returns())


# ---------------------------------------------------------------------------
# Policy gradient
# ---------------------------------------------------------------------------


def _one_step_trace(reward):
    w0 = make_world([2.0, 2.4, 1.5], expert_x=[2.0], expert_phi=1.0, x_min=0.0, x_max=4.0, global_goal=2.0)
    obs = AgentObservation(np.array([2.0, 5.0]), np.array([2.0, 5.0]), 0.0, 0.0, np.array([1, 2]))
    probs = np.array([0.6, 0.4])
    from neifi.acp import ActionRecord

    action = ActionRecord(probs, 0.5, np.array([True, False]), False)
    return EpisodeTrace([[StepRecord(0, obs, action, reward)], [], []], [w0, w0]), obs, action


def test_zero_returns_leave_params():
    p = pn.init_params(SMALL, np.random.default_rng(0))
    trace, _, _ = _one_step_trace(0.0)
    assert reinforce_update(p, trace, 1e-2) == p


def test_single_step_gradient_matches_finite_differences():
    p = pn.init_params(Architecture(hdim=3, hlays=1), np.random.default_rng(2))
    trace, obs, action = _one_step_trace(1.7)
    g = policy_gradient(p, trace)
    # (1/m) * R * d log pi / d theta, with m = 3 agents
    fd = pn.finite_diff_grad(p, lambda q: 1.7 / 3 * pn.logprob_and_grad(q, obs.rows(), action.kept_mask)[0])
    np.testing.assert_allclose(g.flat, fd.flat, rtol=1e-6, atol=1e-9)
    updated = reinforce_update(p, trace, 1e-3)
    np.testing.assert_allclose(updated.flat, p.flat + 1e-3 * g.flat)


def test_explored_steps_excludable():
    p = pn.init_params(SMALL, np.random.default_rng(0))
    trace, obs, action = _one_step_trace(1.0)
    from neifi.acp import ActionRecord

    flipped = ActionRecord(action.probs, action.threshold, action.kept_mask, True)
    trace.entries[0][0] = StepRecord(0, obs, flipped, 1.0)
    assert np.any(policy_gradient(p, trace).flat)
    assert not np.any(policy_gradient(p, trace, include_explored=False).flat)


def test_epsilon_schedule():
    assert epsilon_schedule(0) == 0.0
    assert epsilon_schedule(25) == pytest.approx(0.2)
    assert epsilon_schedule(50) == 0.0
    assert epsilon_schedule(10) == pytest.approx(epsilon_schedule(40))
    vals = [epsilon_schedule(r) for r in range(200)]
    assert min(vals) >= 0 and max(vals) <= 0.2
    with pytest.raises(ValueError):
        epsilon_schedule(-1)


def test_train_deterministic():
    cfg = get_preset("table1-a").scenario.with_(T=10)
    tc = TrainConfig(rounds=3, lr=1e-2, arch=SMALL)
    a = train(tc, cfg, np.random.default_rng(11))
    b = train(tc, cfg, np.random.default_rng(11))
    assert a.params == b.params
    assert a.mean_returns == b.mean_returns
    assert len(a.mean_returns) == 3
    assert a.params != pn.init_params(SMALL, np.random.default_rng(11))


def test_train_rejects_arch_mismatch():
    cfg = get_preset("table1-a").scenario
    with pytest.raises(pn.PolicyFormatError):
        train(TrainConfig(rounds=1, arch=SMALL), cfg, np.random.default_rng(0), pn.init_params(Architecture(), np.random.default_rng(0)))
