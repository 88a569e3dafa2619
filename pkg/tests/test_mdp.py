import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_force_optimum, forward_value
from privrl.environments import random_mdp
from privrl.mdp import (
    MdpSpec,
    Trajectory,
    episode_regret,
    optimal_plan,
    policy_value,
    sample_trajectory,
    trajectory_stats,
)


def two_state_chain(H=3):
    # action 1 in state 0 moves to the rewarding state 1, which is absorbing
    p = np.zeros((2, 2, 2))
    p[0, 0, 0] = 1.0
    p[0, 1, 1] = 1.0
    p[1, :, 1] = 1.0
    r = np.array([[0.5, 0.0], [1.0, 1.0]])
    return MdpSpec(p, r, H)


def test_hand_bellman_chain():
    vt, pi = optimal_plan(two_state_chain(3))
    # from state 0: move then collect 1 twice (2.0) beats staying (1.5)
    np.testing.assert_allclose(vt.V[:, 0], [2.0, 1.0, 0.5, 0.0])
    np.testing.assert_allclose(vt.V[:, 1], [3.0, 2.0, 1.0, 0.0])
    assert pi[0, 0] == 1 and pi[2, 0] == 0


def test_ties_break_to_lowest_action():
    mdp = MdpSpec(np.full((1, 3, 1), 1.0), np.array([[0.5, 0.5, 0.5]]), 2)
    _, pi = optimal_plan(mdp)
    assert np.all(pi == 0)


def test_terminal_row_is_zero(small_mdp):
    vt, _ = optimal_plan(small_mdp)
    assert vt.Q.shape == (2, 2, 2) and vt.V.shape == (3, 2)
    assert np.all(vt.V[-1] == 0)


def test_matches_brute_force_on_random_instances():
    rng = np.random.default_rng(3)
    for _ in range(10):
        S, A, H = rng.integers(1, 4, size=3)
        mdp = random_mdp(int(S), int(A), int(H), 0.5, rng)
        vt, _ = optimal_plan(mdp)
        np.testing.assert_allclose(vt.V[0], brute_force_optimum(mdp.p, mdp.r, mdp.H), atol=1e-10)


def test_policy_value_matches_forward_occupancy(small_mdp, rng):
    for _ in range(5):
        pi = rng.integers(0, 2, size=(2, 2))
        vt = policy_value(small_mdp, pi)
        for s in range(2):
            assert vt.V[0, s] == pytest.approx(forward_value(small_mdp.p, small_mdp.r, pi, s), abs=1e-12)


def test_regret_zero_for_optimal_and_positive_otherwise():
    mdp = two_state_chain(3)
    _, pi = optimal_plan(mdp)
    assert episode_regret(mdp, pi, 0) == 0.0
    assert episode_regret(mdp, np.zeros((3, 2), dtype=int), 0) == pytest.approx(0.5)


def test_policy_validation(small_mdp):
    with pytest.raises(ValueError):
        policy_value(small_mdp, np.zeros((3, 2), dtype=int))
    with pytest.raises(ValueError):
        policy_value(small_mdp, np.full((2, 2), 2))
    with pytest.raises(ValueError):
        episode_regret(small_mdp, np.zeros((2, 2), dtype=int), 5)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(p=np.full((2, 2, 2), 0.6), r=np.zeros((2, 2)), H=2),
        dict(p=np.full((2, 2, 2), 0.5), r=np.full((2, 2), 1.5), H=2),
        dict(p=np.full((2, 2, 2), 0.5), r=np.zeros((2, 2)), H=0),
        dict(p=np.full((2, 2, 2), 0.5), r=np.zeros((2, 3)), H=2),
        dict(p=np.full((2, 2, 2), 0.5), r=np.zeros((2, 2)), H=2, reward_kind="gaussian"),
    ],
)
def test_invalid_mdps_rejected(kwargs):
    with pytest.raises(ValueError):
        MdpSpec(**kwargs)


def test_arrays_are_read_only(small_mdp):
    with pytest.raises(ValueError):
        small_mdp.p[0, 0, 0] = 1.0


def test_json_round_trip(tmp_path, small_mdp):
    path = tmp_path / "env.json"
    small_mdp.save(path)
    back = MdpSpec.load(path)
    assert np.array_equal(back.p, small_mdp.p) and np.array_equal(back.r, small_mdp.r)
    assert back.H == small_mdp.H and np.array_equal(back.rho0, small_mdp.rho0)
    d = small_mdp.to_dict()
    d["extra"] = 1
    with pytest.raises(ValueError, match="extra"):
        MdpSpec.from_dict(d)


def test_trajectory_sampling_is_seeded(small_mdp):
    pi = np.zeros((2, 2), dtype=int)
    a = sample_trajectory(small_mdp, pi, np.random.default_rng(1))
    b = sample_trajectory(small_mdp, pi, np.random.default_rng(1))
    assert a.steps == b.steps and len(a) == 2


def test_trajectory_state_frequencies(small_mdp):
    # second-step state frequencies against the exact one-step occupancy
    rng = np.random.default_rng(5)
    pi = np.array([[1, 0], [0, 1]])
    n = 40_000
    counts = np.zeros(2)
    for _ in range(n):
        counts[sample_trajectory(small_mdp, pi, rng).states[1]] += 1
    expected = sum(small_mdp.rho0[s] * small_mdp.p[s, pi[0, s]] for s in range(2))
    se = np.sqrt(expected * (1 - expected) / n)
    assert np.all(np.abs(counts / n - expected) <= 4 * se + 1e-12)


def test_bernoulli_rewards_mean():
    p = np.ones((1, 1, 1))
    mdp = MdpSpec(p, np.array([[0.3]]), 4, reward_kind="bernoulli")
    rng = np.random.default_rng(2)
    total = sum(sample_trajectory(mdp, np.zeros((4, 1), dtype=int), rng).rewards.sum() for _ in range(5000))
    assert abs(total / 20_000 - 0.3) < 4 * np.sqrt(0.21 / 20_000)


def test_trajectory_stats_against_dictionary_counter():
    x = Trajectory.from_steps([(0, 1, 1.0), (1, 0, 0.5), (0, 1, 0.0), (0, 1, 1.0)])
    st_ = trajectory_stats(x, 2, 2)
    visits, rewards, squares, trans = {}, {}, {}, {}
    steps = x.steps
    for h, (s, a, rew) in enumerate(steps):
        visits[s, a] = visits.get((s, a), 0) + 1
        rewards[s, a] = rewards.get((s, a), 0) + rew
        squares[s, a] = squares.get((s, a), 0) + rew * rew
        if h + 1 < len(steps):
            key = (s, a, steps[h + 1][0])
            trans[key] = trans.get(key, 0) + 1
    for (s, a), v in visits.items():
        assert st_.Nr[s, a] == v and st_.R[s, a] == rewards[s, a] and st_.R2[s, a] == squares[s, a]
    assert st_.Np.sum() == 3
    for key, v in trans.items():
        assert st_.Np[key] == v


def test_trajectory_stats_rejects_out_of_range():
    x = Trajectory.from_steps([(0, 0, 0.0), (2, 0, 0.0)])
    with pytest.raises(IndexError):
        trajectory_stats(x, 2, 1)


@settings(max_examples=40, deadline=None)
@given(
    S=st.integers(1, 3),
    A=st.integers(1, 3),
    H=st.integers(1, 4),
    seed=st.integers(0, 2**32 - 1),
)
def test_optimal_dominates_every_sampled_policy(S, A, H, seed):
    rng = np.random.default_rng(seed)
    mdp = random_mdp(S, A, H, 0.3, rng)
    vt, pi = optimal_plan(mdp)
    assert np.all(vt.V[0] <= H + 1e-12) and np.all(vt.V[0] >= -1e-12)
    np.testing.assert_allclose(policy_value(mdp, pi).V, vt.V, atol=1e-12)
    other = rng.integers(0, A, size=(H, S))
    assert np.all(policy_value(mdp, other).V[0] <= vt.V[0] + 1e-12)
    # stats of any trajectory: visits sum to H, transitions to H - 1
    x = sample_trajectory(mdp, other, rng)
    st_ = trajectory_stats(x, S, A)
    assert st_.Nr.sum() == H and st_.Np.sum() == H - 1
