"""Local randomizers: trajectory -> noisy sufficient statistics.

Each mechanism maps one episode's counters (reward sums, visit counts,
transition counts) to obfuscated versions that satisfy local differential
privacy, and exposes the precision bounds ``(c1, c2, c3, c4)`` that bound the
gap between aggregated noisy and true counters with probability ``1 - delta``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .mdp import Trajectory, _sample_trajectory, _trajectory_stats, trajectory_stats
from .sampling import bounded_de, laplace

__all__ = [
    "MECHANISMS",
    "MechanismConfig",
    "PrivateStats",
    "AggregatedStats",
    "PrecisionBounds",
    "privatize",
    "precision",
    "aggregate",
    "sample_bounded_de",
    "audit_ldp_ratio",
    "coverage_experiment",
]

MECHANISMS = ("laplace", "gaussian", "bernoulli", "bounded", "identity")
_KIND_CODE = {name: i for i, name in enumerate(MECHANISMS)}
LAPLACE, GAUSSIAN, BERNOULLI, BOUNDED, IDENTITY = range(5)

AUDIT_MAX_BITS = 24


@dataclass(frozen=True)
class MechanismConfig:
    """Mechanism choice and calibration for a target privacy level ``epsilon``.

    ``psrl=True`` selects the posterior-sampling variant: the squared reward
    sums are released too and the Laplace scale becomes ``8H/epsilon`` on all
    four statistics.
    """

    kind: str
    epsilon: float
    S: int
    A: int
    H: int
    delta0: float = 0.0
    c_gauss: float | None = None
    c_bound: float = 1.0
    psrl: bool = False

    def __post_init__(self):
        if self.kind not in MECHANISMS:
            raise ValueError(f"unknown mechanism {self.kind!r}; choose from {MECHANISMS}")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if min(self.S, self.A, self.H) < 1:
            raise ValueError("S, A and H must be positive")
        if self.delta0 < 0:
            raise ValueError("delta0 must be nonnegative")
        if self.psrl and self.kind not in ("laplace", "identity"):
            raise ValueError("the posterior-sampling release is only defined for laplace and identity")
        if self.kind == "gaussian":
            if not 0 < self.delta0 < 1:
                raise ValueError("the Gaussian mechanism needs 0 < delta0 < 1")
            if self.eps0 > 1:
                raise ValueError(f"the Gaussian mechanism needs eps0 = eps/6H <= 1, got {self.eps0:.4g}")
            c = self.gauss_c
            if c * c < 4 * math.log(24 / self.delta0):
                raise ValueError("c_gauss must satisfy c^2 >= 4 ln(24/delta0)")
        if self.kind == "bounded":
            if not 0 < self.delta0 < 1:
                raise ValueError("the bounded-noise mechanism needs 0 < delta0 < 1")
            if self.c_bound <= 0:
                raise ValueError("c_bound must be positive")

    @property
    def code(self) -> int:
        return _KIND_CODE[self.kind]

    @property
    def eps0(self) -> float:
        """Per-statistic privacy parameter after splitting ``epsilon`` over the trajectory."""
        if self.kind == "bounded":
            return self.epsilon / (3 * self.H)
        if self.psrl:
            return self.epsilon / (8 * self.H)
        return self.epsilon / (6 * self.H)

    @property
    def gauss_c(self) -> float:
        if self.c_gauss is not None:
            return float(self.c_gauss)
        return 4 * math.log(24 / self.delta0)

    @property
    def radii(self) -> tuple[float, float]:
        """Bounded-noise supports (R1 for rewards/visits, R2 for transitions)."""
        eps, S, A = self.eps0, self.S, self.A
        log_term = math.log(1 / self.delta0)
        r1 = self.c_bound / eps * math.sqrt(S * A * log_term)
        r2 = self.c_bound * S / eps * math.sqrt(A * log_term)
        return r1, r2

    @property
    def reported_delta(self) -> float:
        """Composite delta' of the bounded-noise guarantee (advisory; C is unspecified)."""
        if self.kind != "bounded":
            return self.delta0
        eps, H = self.eps0, self.H
        growth = math.expm1(H * eps) / math.expm1(eps)
        d0 = d1 = self.delta0 * growth
        e1, e2 = math.exp(H * eps), math.exp(2 * H * eps)
        return d1 * e2 + 2 * d0 * e2 + 2 * d0 * d1 * e1 + d0**2 * e1 + d0**2 * d1

    def kernel_params(self) -> np.ndarray:
        """Numeric parameters consumed by the compiled privatizer."""
        if self.kind == "laplace":
            return np.array([1.0 / self.eps0, 0.0])
        if self.kind == "gaussian":
            return np.array([self.gauss_c * self.H / self.eps0, 0.0])
        if self.kind == "bernoulli":
            return np.array([self.eps0, 0.0])
        if self.kind == "bounded":
            return np.array(self.radii)
        return np.zeros(2)

    def precision_params(self) -> np.ndarray:
        if self.kind == "gaussian":
            return np.array([self.gauss_c * self.H / self.eps0, 0.0])
        return self.kernel_params()


@dataclass(frozen=True, eq=False)
class PrivateStats:
    """Obfuscated per-episode statistics; entries may be negative."""

    R: np.ndarray
    Nr: np.ndarray
    Np: np.ndarray
    R2: np.ndarray | None = None


@dataclass(frozen=True, eq=False)
class AggregatedStats:
    """Running sums of the privatized statistics over ``k`` episodes."""

    k: int
    R: np.ndarray
    Nr: np.ndarray
    Np: np.ndarray
    R2: np.ndarray | None = None

    @classmethod
    def empty(cls, S: int, A: int, with_r2: bool = False) -> "AggregatedStats":
        r2 = np.zeros((S, A)) if with_r2 else None
        return cls(0, np.zeros((S, A)), np.zeros((S, A)), np.zeros((S, A, S)), r2)


def aggregate(acc: AggregatedStats, ps: PrivateStats) -> AggregatedStats:
    if acc.R.shape != ps.R.shape or acc.Np.shape != ps.Np.shape:
        raise ValueError("statistic shapes do not match")
    if (acc.R2 is None) != (ps.R2 is None):
        raise ValueError("squared-reward sums present on one side only")
    r2 = None if acc.R2 is None else acc.R2 + ps.R2
    return AggregatedStats(acc.k + 1, acc.R + ps.R, acc.Nr + ps.Nr, acc.Np + ps.Np, r2)


# --- compiled privatizer ----------------------------------------------------


@njit(cache=True)
def _rr(gen, value, e0):
    # randomized response on value in [0, 1], then the unbiasing affine map
    q = 1.0 / (e0 + 1.0)
    y = 1.0 if gen.random() < (e0 - 1.0) / (e0 + 1.0) * value + q else 0.0
    return (e0 + 1.0) / (e0 - 1.0) * (y - q)


@njit(cache=True)
def _add_noise(gen, kind, params, arr):
    flat = arr.ravel()
    if kind == LAPLACE:
        for i in range(flat.shape[0]):
            flat[i] += laplace(gen, params[0])
    elif kind == GAUSSIAN:
        for i in range(flat.shape[0]):
            flat[i] += params[0] * gen.standard_normal()


@njit(cache=True)
def _privatize(gen, kind, params, with_r2, states, actions, rewards, R, Nr, Np, R2):
    """Write privatized statistics of one trajectory into R, Nr, Np (and R2)."""
    S, A = R.shape
    H = states.shape[0]
    if kind == BERNOULLI:
        e0 = math.exp(params[0])
        R[:] = 0.0
        Nr[:] = 0.0
        Np[:] = 0.0
        R2[:] = 0.0
        for h in range(H):
            for s in range(S):
                for a in range(A):
                    hit = states[h] == s and actions[h] == a
                    R[s, a] += _rr(gen, rewards[h] if hit else 0.0, e0)
                    Nr[s, a] += _rr(gen, 1.0 if hit else 0.0, e0)
                    if h < H - 1:
                        for t in range(S):
                            v = 1.0 if hit and states[h + 1] == t else 0.0
                            Np[s, a, t] += _rr(gen, v, e0)
        return
    _trajectory_stats(states, actions, rewards, R, Nr, Np, R2)
    if kind == BOUNDED:
        for s in range(S):
            for a in range(A):
                R[s, a] += bounded_de(gen, params[0])
        for s in range(S):
            for a in range(A):
                Nr[s, a] += bounded_de(gen, params[0])
        for s in range(S):
            for a in range(A):
                for t in range(S):
                    Np[s, a, t] += bounded_de(gen, params[1])
        return
    _add_noise(gen, kind, params, R)
    _add_noise(gen, kind, params, Nr)
    _add_noise(gen, kind, params, Np)
    if with_r2:
        _add_noise(gen, kind, params, R2)


def privatize(config: MechanismConfig, x: Trajectory, rng: np.random.Generator) -> PrivateStats:
    """Release noisy statistics of one trajectory under ``config``."""
    S, A, H = config.S, config.A, config.H
    states = np.asarray(x.states, dtype=np.int64)
    actions = np.asarray(x.actions, dtype=np.int64)
    rewards = np.asarray(x.rewards, dtype=float)
    if len(states) != H:
        raise ValueError(f"trajectory has length {len(states)}, expected H={H}")
    if states.min() < 0 or states.max() >= S or actions.min() < 0 or actions.max() >= A:
        raise IndexError("trajectory indices out of range")
    if config.kind == "bernoulli" and (rewards.min() < 0 or rewards.max() > 1):
        raise ValueError("randomized response needs rewards in [0, 1]")
    R, Nr, R2 = np.empty((S, A)), np.empty((S, A)), np.empty((S, A))
    Np = np.empty((S, A, S))
    _privatize(rng, config.code, config.kernel_params(), config.psrl, states, actions, rewards, R, Nr, Np, R2)
    return PrivateStats(R, Nr, Np, R2 if config.psrl else None)


def sample_bounded_de(R: float, rng: np.random.Generator) -> float:
    if not R > 0:
        raise ValueError("R must be positive")
    return bounded_de(rng, float(R))


# --- precision bounds -------------------------------------------------------


@njit(cache=True)
def _precision(kind, params, S, A, H, k, delta):
    """Closed-form (c1, c2, c3, c4) for ``k`` episodes at confidence ``delta``."""
    if kind == LAPLACE:
        eps0 = 1.0 / params[0]
        l1 = math.log(6.0 * S * A / delta)
        l2 = math.log(6.0 * S * S * A / delta)
        c1 = max(math.sqrt(k), l1) * math.sqrt(8.0 * l1) / eps0
        c4 = max(math.sqrt(k * S), l2) * math.sqrt(8.0 * l2) / eps0 / math.sqrt(S)
        return c1, c1, math.sqrt(S) * c4, c4
    if kind == GAUSSIAN:
        sigma = params[0]
        l1 = math.log(6.0 * S * A / delta)
        c1 = max(sigma * math.sqrt((k - 1) * l1), 1.0)
        c3 = max(sigma * math.sqrt((k - 1) * S * l1), 1.0)
        return c1, c1, c3, c1
    if kind == BERNOULLI:
        e0 = math.exp(params[0])
        f = (2.0 * e0 - 1.0) / (e0 - 1.0)
        base = (k - 1) * H / 2.0
        c1 = max(1.0, f * math.sqrt(base * math.log(4.0 * S * A / delta)))
        c3 = max(1.0, S * f * math.sqrt(base * math.log(4.0 * S * A / delta)))
        c4 = max(1.0, f * math.sqrt(base * math.log(4.0 * S * S * A / delta)))
        return c1, c1, c3, c4
    if kind == BOUNDED:
        r1 = params[0]
        r2 = params[1]
        l1 = math.log(6.0 * S * A / delta)
        l2 = math.log(6.0 * S * S * A / delta)
        c1 = max(r1 * math.sqrt(2.0 * (k - 1) * l1), 1.0)
        c3 = max(r2 * math.sqrt(2.0 * S * (k - 1) * l2), 1.0)
        c4 = max(r2 * math.sqrt(2.0 * (k - 1) * l2), 1.0)
        return c1, c1, c3, c4
    return 1.0, 1.0, 1.0, 1.0


@dataclass(frozen=True)
class PrecisionBounds:
    """Callable ``(k, delta) -> (c1, c2, c3, c4)`` for one mechanism calibration."""

    kind: str
    S: int
    A: int
    H: int
    params: np.ndarray = field(repr=False)
    eps0: float = 0.0
    delta0: float = 0.0

    @property
    def code(self) -> int:
        return _KIND_CODE[self.kind]

    def __call__(self, k: int, delta: float) -> tuple[float, float, float, float]:
        if k < 1:
            raise ValueError("k must be at least 1")
        if not 0 < delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        return _precision(self.code, self.params, self.S, self.A, self.H, float(k), float(delta))


def precision(config: MechanismConfig) -> PrecisionBounds:
    return PrecisionBounds(
        config.kind,
        config.S,
        config.A,
        config.H,
        config.precision_params(),
        eps0=config.eps0,
        delta0=config.delta0,
    )


# --- empirical privacy audits -----------------------------------------------


def _flat_stats(config: MechanismConfig, x: Trajectory) -> np.ndarray:
    st = trajectory_stats(x, config.S, config.A)
    parts = [st.R.ravel(), st.Nr.ravel(), st.Np.ravel()]
    if config.psrl:
        parts.append(st.R2.ravel())
    return np.concatenate(parts)


def _rr_bit_probs(config: MechanismConfig, x: Trajectory) -> np.ndarray:
    """Probability of a one for every randomized-response bit, in release order."""
    S, A, H = config.S, config.A, config.H
    e0 = math.exp(config.eps0)
    probs = []
    for h in range(H):
        for s in range(S):
            for a in range(A):
                hit = x.states[h] == s and x.actions[h] == a
                probs.append(x.rewards[h] if hit else 0.0)
                probs.append(1.0 if hit else 0.0)
                if h < H - 1:
                    for t in range(S):
                        probs.append(1.0 if hit and x.states[h + 1] == t else 0.0)
    v = np.asarray(probs, dtype=float)
    return (e0 - 1) / (e0 + 1) * v + 1 / (e0 + 1)


def _audit_bernoulli(config, x, x_prime) -> float:
    S, A, H = config.S, config.A, config.H
    if H * S * A * (1 + S) > AUDIT_MAX_BITS:
        raise ValueError(
            f"exhaustive audit limited to H*S*A*(1+S) <= {AUDIT_MAX_BITS} bits, got {H * S * A * (1 + S)}"
        )
    p, q = _rr_bit_probs(config, x), _rr_bit_probs(config, x_prime)
    n = len(p)
    log_ratio_one = np.log(p) - np.log(q)
    log_ratio_zero = np.log1p(-p) - np.log1p(-q)
    worst = 0.0
    chunk = 1 << min(n, 16)
    outcomes = np.arange(1 << n, dtype=np.int64)
    shifts = np.arange(n, dtype=np.int64)
    for start in range(0, 1 << n, chunk):
        bits = (outcomes[start : start + chunk, None] >> shifts) & 1
        lr = bits @ log_ratio_one + (1 - bits) @ log_ratio_zero
        worst = max(worst, float(np.abs(lr).max()))
    return worst


def audit_ldp_ratio(
    config: MechanismConfig,
    x: Trajectory,
    x_prime: Trajectory,
    rng: np.random.Generator | None = None,
    n_samples: int = 200,
    n_grid: int = 101,
) -> float:
    """Largest absolute log-likelihood ratio between the releases for ``x`` and ``x_prime``.

    Randomized response is audited exactly by enumerating every output bit
    vector. Laplace releases are audited on a product grid of outputs
    (per-coordinate grids spanning both true values plus sampled releases);
    the density factorizes so the grid maximum is the sum of per-coordinate
    maxima. Gaussian releases have unbounded pointwise loss, so they are
    audited on sampled releases only.
    """
    if config.kind == "bernoulli":
        return _audit_bernoulli(config, x, x_prime)
    t, t2 = _flat_stats(config, x), _flat_stats(config, x_prime)
    if config.kind == "identity":
        return 0.0 if np.array_equal(t, t2) else math.inf
    if config.kind not in ("laplace", "gaussian"):
        raise ValueError(f"no likelihood audit for the {config.kind} mechanism")
    rng = np.random.default_rng(0) if rng is None else rng
    scale = config.kernel_params()[0]
    if config.kind == "laplace":
        noise = rng.laplace(0.0, scale, size=(n_samples, t.size))
    else:
        noise = rng.normal(0.0, scale, size=(n_samples, t.size))
    outputs = np.concatenate([t + noise, t2 + noise])

    def loss(o):
        if config.kind == "laplace":
            return (np.abs(o - t2) - np.abs(o - t)) / scale
        return ((o - t2) ** 2 - (o - t) ** 2) / (2 * scale**2)

    worst = float(np.abs(loss(outputs).sum(axis=1)).max())
    if config.kind == "laplace":
        lo = np.minimum(t, t2) - 3 * scale
        hi = np.maximum(t, t2) + 3 * scale
        grid = np.linspace(lo, hi, n_grid)
        grid = np.concatenate([grid, outputs])
        per_coord = loss(grid)
        worst = max(worst, float(per_coord.max(axis=0).sum()), float(-per_coord.min(axis=0).sum()))
    return worst


@dataclass(frozen=True)
class CoverageReport:
    k: int
    delta: float
    n_trials: int
    fractions: tuple[float, float, float, float]


@njit(cache=True)
def _coverage_trial(gen, p, r, bernoulli, rho0, H, k, kind, params, gaps):
    """Aggregate ``k`` random-policy trajectories; write true-vs-private gaps into ``gaps``."""
    S, A = r.shape
    states = np.empty(H, dtype=np.int64)
    actions = np.empty(H, dtype=np.int64)
    rewards = np.empty(H)
    pi = np.empty((H, S), dtype=np.int64)
    R, Nr, R2 = np.empty((S, A)), np.empty((S, A)), np.empty((S, A))
    Np = np.empty((S, A, S))
    tR, tNr, tR2 = np.empty((S, A)), np.empty((S, A)), np.empty((S, A))
    tNp = np.empty((S, A, S))
    gR, gNr = np.zeros((S, A)), np.zeros((S, A))
    gNp = np.zeros((S, A, S))
    for _ in range(k):
        for h in range(H):
            for s in range(S):
                pi[h, s] = gen.integers(0, A)
        _sample_trajectory(gen, p, r, bernoulli, rho0, pi, states, actions, rewards)
        _trajectory_stats(states, actions, rewards, tR, tNr, tNp, tR2)
        _privatize(gen, kind, params, False, states, actions, rewards, R, Nr, Np, R2)
        gR += R - tR
        gNr += Nr - tNr
        gNp += Np - tNp
    # largest deviation of each kind across all entries
    gaps[0] = np.abs(gR).max()
    gaps[1] = np.abs(gNr).max()
    gaps[2] = np.abs(gNp.sum(axis=2)).max()
    gaps[3] = np.abs(gNp).max()


def coverage_experiment(
    config: MechanismConfig,
    mdp,
    k: int,
    delta: float,
    n_trials: int,
    rng: np.random.Generator,
) -> CoverageReport:
    """Fraction of trials in which each precision bound holds for every entry.

    Each trial aggregates ``k`` trajectories generated under uniformly random
    policies, and the bounds are those a learner would use at episode
    ``k + 1`` (after ``k`` aggregated episodes).
    """
    if k < 1 or n_trials < 1:
        raise ValueError("k and n_trials must be positive")
    bounds = np.array(precision(config)(k + 1, delta))
    params = config.kernel_params()
    gaps = np.empty(4)
    hits = np.zeros(4)
    for _ in range(n_trials):
        _coverage_trial(rng, mdp.p, mdp.r, mdp.bernoulli_rewards, mdp.rho0, config.H, k, config.code, params, gaps)
        hits += gaps <= bounds
    return CoverageReport(k, delta, n_trials, tuple(float(h) / n_trials for h in hits))


def enumerate_policies(S: int, A: int, H: int):
    """All deterministic nonstationary policies (small problems only)."""
    for flat in itertools.product(range(A), repeat=H * S):
        yield np.array(flat, dtype=np.int64).reshape(H, S)
