"""Learning agents that only ever see privatized statistics.

* ``ObiAgent``: optimistic planning on noisy averages with bonuses widened by
  the mechanism's precision bounds, solved by truncated backward induction.
* ``UcbViAgent``: the same pipeline on exact counts with unit precision
  bounds (a Hoeffding-style UCB-VI).
* ``PsrlAgent``: posterior sampling with Dirichlet transitions and
  Normal-Gamma rewards whose posteriors are driven by noisy counts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .mdp import ValueTables, _backward_induction
from .randomizers import (
    AggregatedStats,
    MechanismConfig,
    PrecisionBounds,
    PrivateStats,
    _precision,
    aggregate,
    precision,
)
from .sampling import dirichlet, standard_gamma

__all__ = [
    "ALGOS",
    "ObiConfig",
    "EstimatedModel",
    "PosteriorParams",
    "delta_schedule",
    "estimate_model",
    "obi_plan",
    "ucbvi_baseline_plan",
    "psrl_update",
    "posterior_from_aggregate",
    "psrl_plan",
    "ObiAgent",
    "UcbViAgent",
    "PsrlAgent",
    "make_agent",
]

ALGOS = ("obi", "ucbvi", "psrl")

# kernel status codes
OK, BAD_DENOMINATOR, BAD_POSTERIOR = 0, 1, 2


def delta_schedule(delta: float, k: int) -> float:
    """Per-episode confidence slice ``3 delta / (2 k^2 pi^2)``."""
    return 3.0 * delta / (2.0 * k * k * math.pi**2)


@dataclass(frozen=True)
class ObiConfig:
    S: int
    A: int
    H: int
    precision: PrecisionBounds
    alpha: float = 2.0
    delta: float = 0.1

    def __post_init__(self):
        if not self.alpha > 1:
            raise ValueError(f"alpha must exceed 1, got {self.alpha}")
        if not 0 < self.delta < 1:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")
        if (self.precision.S, self.precision.A, self.precision.H) != (self.S, self.A, self.H):
            raise ValueError("precision bounds were built for different dimensions")


@dataclass(frozen=True, eq=False)
class EstimatedModel:
    """Noisy reward/transition estimates and their confidence widths.

    ``p`` is a signed sub-probability kernel: rows may hold negative entries
    and need not sum to one.
    """

    r: np.ndarray
    p: np.ndarray
    beta_r: np.ndarray
    beta_p: np.ndarray


# --- optimistic planning kernels -------------------------------------------


@njit(cache=True)
def _estimate(R, Nr, Np, k, alpha, delta, c1, c2, c3, c4, H, r_out, p_out, br_out, bp_out):
    S, A = R.shape
    log_term = math.log(4.0 * math.pi**2 * S * A * H * k**3 / (3.0 * delta))
    for s in range(S):
        for a in range(A):
            den_r = Nr[s, a] + alpha * c2
            n_p = 0.0
            for t in range(S):
                n_p += Np[s, a, t]
            den_p = n_p + alpha * c3
            if not (den_r > 0.0 and den_p > 0.0):
                return BAD_DENOMINATOR
            r_out[s, a] = R[s, a] / den_r
            for t in range(S):
                p_out[s, a, t] = Np[s, a, t] / den_p
            br_out[s, a] = math.sqrt(2.0 * log_term / den_r) + ((alpha + 1.0) * c2 + c1) / den_r
            bp_out[s, a] = math.sqrt(14.0 * S * log_term / den_p) + (S * c4 + (alpha + 1.0) * c3) / den_p
    return OK


@njit(cache=True)
def _optimistic_plan(R, Nr, Np, k, alpha, delta, c1, c2, c3, c4, H):
    S, A = R.shape
    r_hat = np.empty((S, A))
    p_hat = np.empty((S, A, S))
    beta_r = np.empty((S, A))
    beta_p = np.empty((S, A))
    status = _estimate(R, Nr, Np, k, alpha, delta, c1, c2, c3, c4, H, r_hat, p_hat, beta_r, beta_p)
    bonus = np.empty((H, S, A))
    for h in range(H):
        # (H - h + 1) with 1-indexed steps
        for s in range(S):
            for a in range(A):
                bonus[h, s, a] = (H - h) * beta_p[s, a] + beta_r[s, a]
    Q, V, pi = _backward_induction(p_hat, r_hat, bonus, H, True)
    return status, Q, V, pi


def estimate_model(cfg: ObiConfig, agg: AggregatedStats, k: int) -> EstimatedModel:
    """Noisy averages and confidence widths for planning at episode ``k``."""
    _check_plan_inputs(cfg, agg, k)
    c1, c2, c3, c4 = cfg.precision(k, delta_schedule(cfg.delta, k))
    S, A = cfg.S, cfg.A
    r, p = np.empty((S, A)), np.empty((S, A, S))
    br, bp = np.empty((S, A)), np.empty((S, A))
    status = _estimate(agg.R, agg.Nr, agg.Np, float(k), cfg.alpha, cfg.delta, c1, c2, c3, c4, cfg.H, r, p, br, bp)
    if status != OK:
        raise ValueError(f"nonpositive estimate denominator at episode {k}")
    return EstimatedModel(r, p, br, bp)


def _check_plan_inputs(cfg: ObiConfig, agg: AggregatedStats, k: int) -> None:
    if k < 1:
        raise ValueError(f"episode index must be at least 1, got {k}")
    if agg.R.shape != (cfg.S, cfg.A) or agg.Np.shape != (cfg.S, cfg.A, cfg.S):
        raise ValueError("aggregated statistics do not match the configured dimensions")


def obi_plan(cfg: ObiConfig, agg: AggregatedStats, k: int) -> tuple[np.ndarray, ValueTables]:
    """Greedy policy of the optimistic model built from ``k - 1`` aggregated episodes."""
    _check_plan_inputs(cfg, agg, k)
    c1, c2, c3, c4 = cfg.precision(k, delta_schedule(cfg.delta, k))
    status, Q, V, pi = _optimistic_plan(agg.R, agg.Nr, agg.Np, float(k), cfg.alpha, cfg.delta, c1, c2, c3, c4, cfg.H)
    if status != OK:
        raise ValueError(f"nonpositive estimate denominator at episode {k}")
    return pi, ValueTables(Q, V)


def _identity_bounds(S: int, A: int, H: int) -> PrecisionBounds:
    return precision(MechanismConfig("identity", 1.0, S, A, H))


def ucbvi_baseline_plan(cfg: ObiConfig, true_counts: AggregatedStats, k: int) -> tuple[np.ndarray, ValueTables]:
    """Optimistic planning on exact counts with every precision bound fixed at 1."""
    base = ObiConfig(cfg.S, cfg.A, cfg.H, _identity_bounds(cfg.S, cfg.A, cfg.H), cfg.alpha, cfg.delta)
    return obi_plan(base, true_counts, k)


# --- posterior sampling -----------------------------------------------------


@dataclass(frozen=True, eq=False)
class PosteriorParams:
    """Dirichlet transition and Normal-Gamma reward parameters per (s, a)."""

    alpha: np.ndarray
    mu: np.ndarray
    lam: np.ndarray
    nu: np.ndarray
    beta: np.ndarray

    def check(self) -> "PosteriorParams":
        for name in ("alpha", "lam", "nu", "beta"):
            v = getattr(self, name)
            if not np.all(v > 0):
                raise ValueError(f"posterior parameter {name} became nonpositive (min {v.min():.4g})")
        return self

    @classmethod
    def standard(cls, S: int, A: int) -> "PosteriorParams":
        """Unit Dirichlet and Normal-Gamma(0, 1, 1, 1) priors for exact counts."""
        return cls(np.ones((S, A, S)), np.zeros((S, A)), np.ones((S, A)), np.ones((S, A)), np.ones((S, A)))

    @classmethod
    def private_prior(cls, S: int, A: int, H: int, K: int, epsilon: float, delta: float) -> "PosteriorParams":
        """Priors inflated so noisy updates stay positive over ``K`` episodes."""
        eps0 = epsilon / (8 * H)
        l1 = math.log(6 * S * A / delta)
        l2 = math.log(6 * S * S * A / delta)
        c0 = max(math.sqrt(K), l1) * math.sqrt(8 * l1) / eps0
        a0 = max(math.sqrt(K * S), l2) * math.sqrt(8 * l2) / eps0
        full = lambda v: np.full((S, A), v)  # noqa: E731
        return cls(np.full((S, A, S), a0), full(0.0), full(c0), full(c0), full(5 * c0))


def psrl_update(post: PosteriorParams, ps: PrivateStats) -> PosteriorParams:
    """Fold one episode's released statistics into the posterior.

    Uses the additive natural-parameter form: ``lam``, ``lam * mu``, ``nu`` and
    ``beta + lam mu^2 / 2`` each grow by the episode's contribution.
    """
    if ps.R2 is None:
        raise ValueError("posterior updates need the squared-reward sums")
    lam = post.lam + ps.Nr
    mu = (post.lam * post.mu + ps.R) / lam
    beta = post.beta + 0.5 * post.lam * post.mu**2 + 0.5 * ps.R2 - 0.5 * lam * mu**2
    return PosteriorParams(post.alpha + ps.Np, mu, lam, post.nu + 0.5 * ps.Nr, beta).check()


@njit(cache=True)
def _posterior(a0, mu0, lam0, nu0, beta0, R, Nr, Np, R2, alpha, mu, lam, nu, beta):
    S, A = R.shape
    for s in range(S):
        for a in range(A):
            for t in range(S):
                alpha[s, a, t] = a0[s, a, t] + Np[s, a, t]
                if not alpha[s, a, t] > 0.0:
                    return BAD_POSTERIOR
            den = lam0[s, a] + Nr[s, a]
            lam[s, a] = den
            mu[s, a] = (lam0[s, a] * mu0[s, a] + R[s, a]) / den
            nu[s, a] = nu0[s, a] + 0.5 * Nr[s, a]
            beta[s, a] = (
                beta0[s, a]
                + (lam0[s, a] * Nr[s, a] * mu0[s, a] ** 2 - R[s, a] ** 2) / (2.0 * den)
                + 0.5 * R2[s, a]
                - lam0[s, a] * mu0[s, a] * R[s, a] / den
            )
            if not (den > 0.0 and nu[s, a] > 0.0 and beta[s, a] > 0.0):
                return BAD_POSTERIOR
    return OK


def posterior_from_aggregate(prior: PosteriorParams, agg: AggregatedStats) -> PosteriorParams:
    """Closed-form posterior given the prior and aggregated released statistics."""
    if agg.R2 is None:
        raise ValueError("posterior updates need the squared-reward sums")
    S, A = agg.R.shape
    out = PosteriorParams(np.empty((S, A, S)), *(np.empty((S, A)) for _ in range(4)))
    _posterior(
        prior.alpha, prior.mu, prior.lam, prior.nu, prior.beta,
        agg.R, agg.Nr, agg.Np, agg.R2,
        out.alpha, out.mu, out.lam, out.nu, out.beta,
    )  # fmt: skip
    return out.check()


@njit(cache=True)
def _psrl_sample(gen, alpha, mu, lam, nu, beta, clamp, p_out, r_out):
    S, A = mu.shape
    for s in range(S):
        for a in range(A):
            dirichlet(gen, alpha[s, a], p_out[s, a])
            tau = standard_gamma(gen, nu[s, a]) / beta[s, a]
            m = mu[s, a] + gen.standard_normal() / math.sqrt(lam[s, a] * tau)
            if clamp:
                m = min(max(m, 0.0), 1.0)
            r_out[s, a] = m


@njit(cache=True)
def _psrl_policy(gen, alpha, mu, lam, nu, beta, clamp, H):
    S, A = mu.shape
    p = np.empty((S, A, S))
    r = np.empty((S, A))
    _psrl_sample(gen, alpha, mu, lam, nu, beta, clamp, p, r)
    Q, V, pi = _backward_induction(p, r, np.zeros((H, S, A)), H, False)
    return Q, V, pi


def psrl_plan(post: PosteriorParams, H: int, rng: np.random.Generator, clamp: bool = True) -> tuple[np.ndarray, ValueTables]:
    """Optimal policy of one MDP drawn from the posterior."""
    post.check()
    Q, V, pi = _psrl_policy(rng, post.alpha, post.mu, post.lam, post.nu, post.beta, clamp, H)
    return pi, ValueTables(Q, V)


# --- episode-level agents ---------------------------------------------------


class _StatsAgent:
    """Shared bookkeeping: agents receive released statistics and nothing else."""

    def __init__(self, S: int, A: int, H: int, with_r2: bool):
        self.S, self.A, self.H = S, A, H
        self.agg = AggregatedStats.empty(S, A, with_r2)
        self.last_values: ValueTables | None = None

    def observe(self, ps: PrivateStats) -> None:
        if not isinstance(ps, PrivateStats):
            raise TypeError(f"agents only accept PrivateStats, got {type(ps).__name__}")
        self.agg = aggregate(self.agg, ps)

    def _check_k(self, k: int) -> None:
        if k != self.agg.k + 1:
            raise ValueError(f"asked to plan episode {k} after observing {self.agg.k} episodes")


class ObiAgent(_StatsAgent):
    def __init__(self, cfg: ObiConfig):
        super().__init__(cfg.S, cfg.A, cfg.H, with_r2=False)
        self.cfg = cfg

    def plan(self, k: int) -> np.ndarray:
        self._check_k(k)
        pi, self.last_values = obi_plan(self.cfg, self.agg, k)
        return pi


class UcbViAgent(ObiAgent):
    def __init__(self, S: int, A: int, H: int, alpha: float = 2.0, delta: float = 0.1):
        super().__init__(ObiConfig(S, A, H, _identity_bounds(S, A, H), alpha, delta))


class PsrlAgent(_StatsAgent):
    def __init__(self, prior: PosteriorParams, H: int, rng: np.random.Generator, clamp: bool = True):
        S, A = prior.mu.shape
        super().__init__(S, A, H, with_r2=True)
        self.prior = prior.check()
        self.rng = rng
        self.clamp = clamp

    def plan(self, k: int) -> np.ndarray:
        self._check_k(k)
        post = posterior_from_aggregate(self.prior, self.agg)
        pi, self.last_values = psrl_plan(post, self.H, self.rng, self.clamp)
        return pi


def make_agent(
    algo: str,
    mechanism: MechanismConfig,
    K: int,
    rng: np.random.Generator,
    alpha: float = 2.0,
    delta: float = 0.1,
    clamp: bool = True,
):
    """Build the agent for ``algo``; ``rng`` is only consumed by posterior sampling."""
    S, A, H = mechanism.S, mechanism.A, mechanism.H
    if algo == "obi":
        return ObiAgent(ObiConfig(S, A, H, precision(mechanism), alpha, delta))
    if algo == "ucbvi":
        return UcbViAgent(S, A, H, alpha, delta)
    if algo == "psrl":
        if mechanism.kind == "identity":
            prior = PosteriorParams.standard(S, A)
        else:
            prior = PosteriorParams.private_prior(S, A, H, K, mechanism.epsilon, delta)
        return PsrlAgent(prior, H, rng, clamp)
    raise ValueError(f"unknown algorithm {algo!r}; choose from {ALGOS}")
