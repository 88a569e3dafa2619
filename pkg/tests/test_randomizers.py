import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from privrl.environments import random_mdp
from privrl.mdp import Trajectory, trajectory_stats
from privrl.randomizers import (
    AggregatedStats,
    MechanismConfig,
    PrivateStats,
    aggregate,
    audit_ldp_ratio,
    coverage_experiment,
    precision,
    privatize,
    sample_bounded_de,
)

X = Trajectory.from_steps([(0, 1, 1.0), (1, 0, 0.0)])
X_FAR = Trajectory.from_steps([(1, 0, 0.0), (0, 1, 1.0)])


def mech(kind, eps=2.0, S=2, A=2, H=2, **kw):
    if kind in ("gaussian", "bounded"):
        kw.setdefault("delta0", 0.1)
    return MechanismConfig(kind, eps, S, A, H, **kw)


def test_identity_equals_true_statistics(rng):
    ps = privatize(mech("identity"), X, rng)
    st_ = trajectory_stats(X, 2, 2)
    assert np.array_equal(ps.R, st_.R) and np.array_equal(ps.Nr, st_.Nr) and np.array_equal(ps.Np, st_.Np)
    assert ps.R2 is None


def test_bernoulli_single_bit_distribution():
    # eps0 = ln 3: a one is released as 3/2 w.p. 3/4 and -1/2 w.p. 1/4
    cfg = MechanismConfig("bernoulli", 6 * math.log(3), 1, 1, 1)
    rng = np.random.default_rng(0)
    x = Trajectory.from_steps([(0, 0, 1.0)])
    out = np.array([privatize(cfg, x, rng).R[0, 0] for _ in range(20_000)])
    np.testing.assert_allclose(np.unique(out), [-0.5, 1.5])
    frac = np.mean(np.isclose(out, 1.5))
    assert abs(frac - 0.75) < 4 * math.sqrt(0.75 * 0.25 / len(out))
    assert abs(out.mean() - 1.0) < 4 * out.std() / math.sqrt(len(out))


@settings(max_examples=30, deadline=None)
@given(S=st.integers(1, 3), A=st.integers(1, 3), eps=st.floats(0.05, 20.0), seed=st.integers(0, 2**32 - 1))
def test_bernoulli_single_step_output_set(S, A, eps, seed):
    rng = np.random.default_rng(seed)
    cfg = MechanismConfig("bernoulli", eps, S, A, 1)
    e = math.exp(cfg.eps0)
    allowed = np.array([-1 / (e - 1), e / (e - 1)])
    x = Trajectory.from_steps([(int(rng.integers(S)), int(rng.integers(A)), float(rng.random()))])
    ps = privatize(cfg, x, rng)
    for arr in (ps.R, ps.Nr):
        assert np.all(np.min(np.abs(arr.ravel()[:, None] - allowed), axis=1) < 1e-9)
    assert np.all(ps.Np == 0)


@pytest.mark.parametrize("kind", ["laplace", "gaussian", "bernoulli", "bounded", "identity"])
def test_unbiased_on_every_entry(kind):
    cfg = mech(kind, eps=2.0)
    rng = np.random.default_rng(11)
    n = 10_000
    st_ = trajectory_stats(X, 2, 2)
    truth = np.concatenate([st_.R.ravel(), st_.Nr.ravel(), st_.Np.ravel()])
    samples = np.empty((n, truth.size))
    for i in range(n):
        ps = privatize(cfg, X, rng)
        samples[i] = np.concatenate([ps.R.ravel(), ps.Nr.ravel(), ps.Np.ravel()])
    err = samples.mean(axis=0) - truth
    band = 4 * samples.std(axis=0) / math.sqrt(n)
    assert np.all(np.abs(err) <= band + 1e-12)


def test_laplace_scale_and_psrl_scale():
    assert mech("laplace", eps=2.0).kernel_params()[0] == pytest.approx(6 * 2 / 2.0)
    assert mech("laplace", eps=2.0, psrl=True).kernel_params()[0] == pytest.approx(8 * 2 / 2.0)
    rng = np.random.default_rng(1)
    ps = privatize(mech("laplace", psrl=True), X, rng)
    assert ps.R2 is not None and ps.R2.shape == (2, 2)


def test_bounded_noise_stays_inside_radii(rng):
    cfg = mech("bounded", eps=2.0)
    r1, r2 = cfg.radii
    st_ = trajectory_stats(X, 2, 2)
    for _ in range(200):
        ps = privatize(cfg, X, rng)
        assert np.all(np.abs(ps.R - st_.R) < r1) and np.all(np.abs(ps.Nr - st_.Nr) < r1)
        assert np.all(np.abs(ps.Np - st_.Np) < r2)
    assert cfg.reported_delta > 0


def test_config_validation():
    with pytest.raises(ValueError):
        MechanismConfig("gaussian", 1.0, 2, 2, 2)  # delta0 = 0
    with pytest.raises(ValueError):
        MechanismConfig("gaussian", 13.0, 2, 2, 2, delta0=0.1)  # eps0 > 1
    with pytest.raises(ValueError):
        MechanismConfig("gaussian", 1.0, 2, 2, 2, delta0=0.1, c_gauss=1.0)
    with pytest.raises(ValueError):
        MechanismConfig("laplace", 0.0, 2, 2, 2)
    with pytest.raises(ValueError):
        MechanismConfig("bernoulli", 1.0, 2, 2, 2, psrl=True)
    with pytest.raises(ValueError):
        MechanismConfig("rappor", 1.0, 2, 2, 2)


def test_gaussian_default_constant():
    cfg = mech("gaussian", eps=2.0, delta0=0.05)
    assert cfg.gauss_c == pytest.approx(4 * math.log(24 / 0.05))
    assert cfg.gauss_c**2 >= 4 * math.log(24 / 0.05)


def test_privatize_rejects_bad_inputs(rng):
    with pytest.raises(ValueError):
        privatize(mech("bernoulli"), Trajectory.from_steps([(0, 0, 2.0), (0, 0, 0.0)]), rng)
    with pytest.raises(ValueError):
        privatize(mech("laplace", H=3), X, rng)
    with pytest.raises(IndexError):
        privatize(mech("laplace"), Trajectory.from_steps([(0, 0, 0.0), (5, 0, 0.0)]), rng)


def test_laplace_precision_example():
    c = precision(mech("laplace", eps=2.0))(100, 0.1)
    assert c[0] == pytest.approx(10 * math.sqrt(8 * math.log(240)) / (1 / 6), rel=1e-12)
    assert c[0] == pytest.approx(397.30, abs=0.01)
    assert c[2] == math.sqrt(2) * c[3]


@pytest.mark.parametrize("k", [1, 2, 100, 12345, 10**6])
@pytest.mark.parametrize("delta", [0.5, 0.1, 1e-9])
@pytest.mark.parametrize("dims", [(2, 2, 2), (3, 4, 5)])
def test_precision_matches_scalar_oracles(k, delta, dims):
    S, A, H = dims
    eps = 2.0
    cases = [
        (mech("laplace", eps, S, A, H), oracles.laplace_c(k, S, A, H, eps, delta)),
        (mech("bernoulli", eps, S, A, H), oracles.bernoulli_c(k, S, A, H, eps, delta)),
        (mech("bounded", eps, S, A, H), oracles.bounded_c(k, S, A, H, eps, delta, 0.1)),
        (mech("identity", eps, S, A, H), (1.0, 1.0, 1.0, 1.0)),
    ]
    g = mech("gaussian", eps, S, A, H)
    cases.append((g, oracles.gaussian_c(k, S, A, H, eps, delta, g.gauss_c)))
    for cfg, expected in cases:
        got = precision(cfg)(k, delta)
        np.testing.assert_allclose(got, expected, rtol=1e-12, err_msg=cfg.kind)


@pytest.mark.parametrize("kind", ["laplace", "gaussian", "bernoulli", "bounded", "identity"])
def test_precision_monotone(kind):
    bounds = precision(mech(kind))
    ks, deltas = [1, 10, 10**3, 10**6], [0.5, 0.1, 0.01]
    grid = np.array([[bounds(k, d) for d in deltas] for k in ks])  # (k, delta, 4)
    assert np.all(grid > 0)
    assert np.all(np.diff(grid, axis=0) >= 0)
    assert np.all(np.diff(grid, axis=1) >= 0)


def test_precision_rejects_bad_arguments():
    bounds = precision(mech("laplace"))
    with pytest.raises(ValueError):
        bounds(0, 0.1)
    with pytest.raises(ValueError):
        bounds(5, 1.5)


def test_aggregate_sum_and_order(rng):
    cfg = mech("laplace")
    a, b = privatize(cfg, X, rng), privatize(cfg, X_FAR, rng)
    empty = AggregatedStats.empty(2, 2)
    one = aggregate(empty, a)
    assert one.k == 1 and np.array_equal(one.R, a.R) and np.array_equal(one.Np, a.Np)
    ab = aggregate(aggregate(empty, a), b)
    ba = aggregate(aggregate(empty, b), a)
    assert ab.k == ba.k == 2
    np.testing.assert_allclose(ab.Nr, ba.Nr, rtol=0, atol=1e-12)
    with pytest.raises(ValueError):
        aggregate(AggregatedStats.empty(3, 2), a)
    with pytest.raises(ValueError):
        aggregate(AggregatedStats.empty(2, 2, with_r2=True), a)


def test_identity_aggregate_equals_counting(small_mdp, rng):
    from privrl.mdp import sample_trajectory

    cfg = mech("identity")
    acc = AggregatedStats.empty(2, 2)
    visits = np.zeros((2, 2))
    moves = np.zeros((2, 2, 2))
    for _ in range(1000):
        x = sample_trajectory(small_mdp, rng.integers(0, 2, size=(2, 2)), rng)
        acc = aggregate(acc, privatize(cfg, x, rng))
        for h in range(2):
            visits[x.states[h], x.actions[h]] += 1
        moves[x.states[0], x.actions[0], x.states[1]] += 1
    assert acc.k == 1000 and np.array_equal(acc.Nr, visits) and np.array_equal(acc.Np, moves)


def test_bounded_de_wrapper(rng):
    assert abs(sample_bounded_de(0.5, rng)) < 0.5
    with pytest.raises(ValueError):
        sample_bounded_de(0.0, rng)


def test_audit_identical_trajectories_is_zero(rng):
    for kind in ("laplace", "gaussian", "bernoulli", "identity"):
        cfg = mech(kind, S=2, A=1, H=1) if kind == "bernoulli" else mech(kind)
        x = X if kind != "bernoulli" else Trajectory.from_steps([(1, 0, 1.0)])
        assert audit_ldp_ratio(cfg, x, x, rng) == pytest.approx(0.0, abs=1e-12)


def test_audit_bernoulli_exact_value():
    # four bits differ, each contributing exactly eps0 = eps / 6
    cfg = MechanismConfig("bernoulli", 1.0, 2, 1, 1)
    x = Trajectory.from_steps([(0, 0, 1.0)])
    x2 = Trajectory.from_steps([(1, 0, 1.0)])
    assert audit_ldp_ratio(cfg, x, x2) == pytest.approx(4 / 6, abs=1e-12)


def test_audit_bernoulli_cap():
    cfg = MechanismConfig("bernoulli", 1.0, 3, 2, 2)
    with pytest.raises(ValueError, match="limited"):
        audit_ldp_ratio(cfg, Trajectory.from_steps([(0, 0, 0.0)] * 2), Trajectory.from_steps([(1, 1, 1.0)] * 2))


def test_audit_laplace_within_epsilon(rng):
    cfg = mech("laplace", eps=2.0)
    for _ in range(50):
        x = Trajectory(rng.integers(0, 2, 2), rng.integers(0, 2, 2), rng.random(2))
        x2 = Trajectory(rng.integers(0, 2, 2), rng.integers(0, 2, 2), rng.random(2))
        assert audit_ldp_ratio(cfg, x, x2, rng) <= 2.0 + 1e-9
    # reward, visit and transition counts differ by 2, 4 and 2 in L1; scale 6H/eps
    x = Trajectory.from_steps([(0, 0, 1.0), (0, 0, 1.0)])
    x2 = Trajectory.from_steps([(1, 1, 0.0), (1, 1, 0.0)])
    assert audit_ldp_ratio(cfg, x, x2, rng) == pytest.approx(8 * 2.0 / 12, abs=1e-12)


def test_audit_identity_distinct_is_infinite():
    assert audit_ldp_ratio(mech("identity"), X, X_FAR) == math.inf


def test_audit_rejects_bounded():
    with pytest.raises(ValueError):
        audit_ldp_ratio(mech("bounded"), X, X_FAR)


def test_coverage_small_laplace():
    mdp = random_mdp(2, 2, 2, 0.1, np.random.default_rng(0))
    rep = coverage_experiment(mech("laplace"), mdp, 50, 0.1, 40, np.random.default_rng(1))
    assert all(f >= 0.9 for f in rep.fractions)


def test_private_stats_is_agent_payload():
    ps = PrivateStats(np.zeros((2, 2)), np.zeros((2, 2)), np.zeros((2, 2, 2)))
    assert ps.R2 is None
