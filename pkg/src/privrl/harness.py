"""Episode loop, seeded sweeps, statistic dumps and CSV output.

Every run derives four independent generator streams (environment, agent,
mechanism, trajectory) from one master seed via ``SeedSequence.spawn``, so
the environment of a seed is the same for every epsilon and mechanism noise
does not depend on trajectory randomness.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numba import njit

from . import randomizers as rz
from .agents import (
    ALGOS,
    BAD_DENOMINATOR,
    OK,
    PosteriorParams,
    _optimistic_plan,
    _posterior,
    _psrl_policy,
    make_agent,
)
from .environments import random_mdp
from .mdp import (
    MdpSpec,
    Trajectory,
    _initial_value,
    _sample_trajectory,
    _trajectory_stats,
    optimal_plan,
    sample_trajectory,
    trajectory_stats,
)
from .randomizers import MechanismConfig, _precision, _privatize, privatize

__all__ = [
    "RunConfig",
    "RunResult",
    "SweepSummary",
    "make_env",
    "record_points",
    "run_episode_loop",
    "sweep",
    "summarize",
    "export_stat_samples",
    "write_runs_csv",
    "write_summary_csv",
    "write_stats_csv",
    "fmt",
]

OBI, UCBVI, PSRL = 0, 1, 2
_ALGO_CODE = {"obi": OBI, "ucbvi": UCBVI, "psrl": PSRL}
ENGINES = ("compiled", "python")


def fmt(x) -> str:
    """Bit-stable number formatting (17 significant digits)."""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


@dataclass(frozen=True)
class RunConfig:
    """One learner on one environment for ``K`` episodes.

    The environment is ``RandomMDP(S, A, H, env_alpha)`` drawn from the seed's
    environment stream unless ``env_path`` points at a saved MDP JSON.
    ``record_stride=None`` records geometric checkpoints (ratio ~1.2) plus
    the 1-2-5 decade points.
    """

    K: int = 10_000
    seed: int = 0
    algo: str = "obi"
    mechanism: str = "laplace"
    epsilon: float = 2.0
    delta: float = 0.1
    alpha: float = 2.0
    delta0: float = 0.1
    c_gauss: float | None = None
    c_bound: float = 1.0
    clamp: bool = True
    S: int = 2
    A: int = 2
    H: int = 2
    env_alpha: float = 0.1
    env_path: str | None = None
    record_stride: int | None = None
    engine: str = "compiled"

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be at least 1")
        if self.record_stride is not None and self.record_stride < 1:
            raise ValueError("record_stride must be at least 1")
        if self.algo not in ALGOS:
            raise ValueError(f"unknown algo {self.algo!r}; choose from {ALGOS}")
        if self.mechanism not in rz.MECHANISMS:
            raise ValueError(f"unknown mechanism {self.mechanism!r}; choose from {rz.MECHANISMS}")
        if self.engine not in ENGINES:
            raise ValueError(f"unknown engine {self.engine!r}; choose from {ENGINES}")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")

    @property
    def effective_mechanism(self) -> str:
        # the baseline is non-private by construction
        return "identity" if self.algo == "ucbvi" else self.mechanism

    def mechanism_config(self, S: int, A: int, H: int) -> MechanismConfig:
        kind = self.effective_mechanism
        uses_delta0 = kind in ("gaussian", "bounded")
        return MechanismConfig(
            kind,
            self.epsilon,
            S,
            A,
            H,
            delta0=self.delta0 if uses_delta0 else 0.0,
            c_gauss=self.c_gauss,
            c_bound=self.c_bound,
            psrl=self.algo == "psrl",
        )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        extra = set(d) - names
        if extra:
            raise ValueError(f"unknown RunConfig keys: {sorted(extra)}")
        return cls(**d)


@dataclass(frozen=True, eq=False)
class RunResult:
    config: RunConfig
    ks: np.ndarray
    cum_regret: np.ndarray
    optimism_fraction: float
    final_policy: np.ndarray
    wall_time: float = field(default=0.0, compare=False)

    @property
    def per_step_regret(self) -> np.ndarray:
        return self.cum_regret / self.ks

    @property
    def final_regret(self) -> float:
        return float(self.cum_regret[-1])

    def same_as(self, other: "RunResult") -> bool:
        """Bitwise equality of everything except wall time."""
        return (
            self.config == other.config
            and np.array_equal(self.ks, other.ks)
            and np.array_equal(self.cum_regret, other.cum_regret)
            and self.optimism_fraction == other.optimism_fraction
            and np.array_equal(self.final_policy, other.final_policy)
        )


def record_points(K: int, stride: int | None = None, ratio: float = 1.2) -> np.ndarray:
    if stride is not None:
        ks = list(range(stride, K + 1, stride))
    else:
        ks, x = [], 1.0
        while x <= K:
            ks.append(int(round(x)))
            x = max(x * ratio, x + 1)
        # round 1-2-5 checkpoints so common horizons are always recorded
        ks += [m * 10**e for e in range(len(str(K))) for m in (1, 2, 5) if m * 10**e <= K]
    if not ks or ks[-1] != K:
        ks.append(K)
    return np.unique(np.asarray(ks, dtype=np.int64))


def _streams(seed: int):
    env, agent, mech, traj = np.random.SeedSequence(seed).spawn(4)
    return tuple(np.random.default_rng(s) for s in (env, agent, mech, traj))


def make_env(cfg: RunConfig, env_rng: np.random.Generator | None = None) -> MdpSpec:
    if cfg.env_path is not None:
        return MdpSpec.load(cfg.env_path)
    rng = _streams(cfg.seed)[0] if env_rng is None else env_rng
    return random_mdp(cfg.S, cfg.A, cfg.H, cfg.env_alpha, rng)


# --- fused compiled loop ----------------------------------------------------


@njit(cache=True)
def _fused_loop(
    algo, p, r, bernoulli, rho0, v_star, K, record_ks,
    mkind, mparams, with_r2, pkind, pparams, alpha, delta,
    a0, mu0, lam0, nu0, beta0, clamp,
    agent_gen, mech_gen, traj_gen, cum_out,
):  # fmt: skip
    S, A = r.shape
    H = v_star.shape[0] - 1
    aR, aNr, aR2 = np.zeros((S, A)), np.zeros((S, A)), np.zeros((S, A))
    aNp = np.zeros((S, A, S))
    R, Nr, R2 = np.empty((S, A)), np.empty((S, A)), np.empty((S, A))
    Np = np.empty((S, A, S))
    post_a = np.empty((S, A, S))
    post_mu, post_lam = np.empty((S, A)), np.empty((S, A))
    post_nu, post_beta = np.empty((S, A)), np.empty((S, A))
    states = np.empty(H, dtype=np.int64)
    actions = np.empty(H, dtype=np.int64)
    rewards = np.empty(H)
    pi = np.zeros((H, S), dtype=np.int64)
    cum = 0.0
    optimistic = 0
    rec = 0
    for k in range(1, K + 1):
        if algo == PSRL:
            status = _posterior(a0, mu0, lam0, nu0, beta0, aR, aNr, aNp, aR2, post_a, post_mu, post_lam, post_nu, post_beta)
            if status != OK:
                return status, k, optimistic, pi
            Q, V, pi = _psrl_policy(agent_gen, post_a, post_mu, post_lam, post_nu, post_beta, clamp, H)
        else:
            c1, c2, c3, c4 = _precision(pkind, pparams, S, A, H, float(k), 3.0 * delta / (2.0 * k * k * math.pi**2))
            status, Q, V, pi = _optimistic_plan(aR, aNr, aNp, float(k), alpha, delta, c1, c2, c3, c4, H)
            if status != OK:
                return status, k, optimistic, pi
        _sample_trajectory(traj_gen, p, r, bernoulli, rho0, pi, states, actions, rewards)
        s1 = states[0]
        if V[0, s1] >= v_star[0, s1] - 1e-9:
            optimistic += 1
        cum += v_star[0, s1] - _initial_value(p, r, pi, H, s1)
        _privatize(mech_gen, mkind, mparams, with_r2, states, actions, rewards, R, Nr, Np, R2)
        aR += R
        aNr += Nr
        aNp += Np
        if with_r2:
            aR2 += R2
        if rec < record_ks.shape[0] and record_ks[rec] == k:
            cum_out[rec] = cum
            rec += 1
    return OK, K, optimistic, pi


def _prior_arrays(agent, S, A):
    if isinstance(getattr(agent, "prior", None), PosteriorParams):
        pr = agent.prior
        return pr.alpha, pr.mu, pr.lam, pr.nu, pr.beta
    return np.zeros((S, A, S)), *(np.zeros((S, A)) for _ in range(4))


def run_episode_loop(cfg: RunConfig, mdp: MdpSpec | None = None, agent=None) -> RunResult:
    """Run one learner for ``cfg.K`` episodes and record cumulative regret.

    Per episode: plan, roll out the policy from ``s1 ~ rho0``, add the exact
    regret ``V*_1(s1) - V^pi_1(s1)``, privatize the trajectory and hand only
    the released statistics to the agent.

    ``agent`` substitutes a custom object with ``plan(k)``, ``observe(ps)``
    and ``last_values``; it always runs on the Python engine.
    """
    t0 = time.perf_counter()
    env_rng, agent_rng, mech_rng, traj_rng = _streams(cfg.seed)
    if mdp is None:
        mdp = make_env(cfg, env_rng)
    S, A, H = mdp.S, mdp.A, mdp.H
    mech = cfg.mechanism_config(S, A, H)
    custom = agent is not None
    if not custom:
        agent = make_agent(cfg.algo, mech, cfg.K, agent_rng, cfg.alpha, cfg.delta, cfg.clamp)
    vstar, _ = optimal_plan(mdp)
    ks = record_points(cfg.K, cfg.record_stride)
    cum_out = np.zeros(len(ks))

    if cfg.engine == "compiled" and not custom:
        prec = rz.precision(mech) if cfg.algo == "obi" else rz.precision(MechanismConfig("identity", 1.0, S, A, H))
        status, k_fail, optimistic, pi = _fused_loop(
            _ALGO_CODE[cfg.algo], mdp.p, mdp.r, mdp.bernoulli_rewards, mdp.rho0, vstar.V, cfg.K, ks,
            mech.code, mech.kernel_params(), mech.psrl, prec.code, prec.params, cfg.alpha, cfg.delta,
            *_prior_arrays(agent, S, A), cfg.clamp,
            agent_rng, mech_rng, traj_rng, cum_out,
        )  # fmt: skip
        if status == BAD_DENOMINATOR:
            raise ValueError(f"nonpositive estimate denominator at episode {k_fail}")
        if status != OK:
            raise ValueError(f"posterior parameter became nonpositive at episode {k_fail}")
    else:
        cum, optimistic, rec = 0.0, 0, 0
        for k in range(1, cfg.K + 1):
            pi = agent.plan(k)
            x = sample_trajectory(mdp, pi, traj_rng)
            s1 = int(x.states[0])
            if agent.last_values.V[0, s1] >= vstar.V[0, s1] - 1e-9:
                optimistic += 1
            cum += vstar.V[0, s1] - _initial_value(mdp.p, mdp.r, pi, H, s1)
            agent.observe(privatize(mech, x, mech_rng))
            if rec < len(ks) and ks[rec] == k:
                cum_out[rec] = cum
                rec += 1
    return RunResult(cfg, ks, cum_out, optimistic / cfg.K, np.asarray(pi), time.perf_counter() - t0)


# --- sweeps -----------------------------------------------------------------


def _run_cell(cfg: RunConfig) -> RunResult:
    return run_episode_loop(cfg)


def sweep(base: RunConfig, epsilons, seeds, jobs: int = 1, baseline: bool = False) -> list[RunResult]:
    """Every (epsilon, seed) cell of ``base``; optionally one UCB-VI run per seed.

    Results come back in grid order regardless of ``jobs``.
    """
    epsilons, seeds = list(epsilons), list(seeds)
    if not epsilons or not seeds:
        raise ValueError("need at least one epsilon and one seed")
    cells = [dataclasses.replace(base, epsilon=float(e), seed=int(s)) for e in epsilons for s in seeds]
    if baseline:
        cells += [dataclasses.replace(base, algo="ucbvi", seed=int(s)) for s in seeds]
    if jobs <= 1:
        return [_run_cell(c) for c in cells]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_cell, cells))


@dataclass(frozen=True, eq=False)
class SweepSummary:
    algo: str
    mechanism: str
    epsilon: float
    ks: np.ndarray
    mean_cum: np.ndarray
    min_cum: np.ndarray
    max_cum: np.ndarray
    n_runs: int

    @property
    def mean_per_step(self) -> np.ndarray:
        return self.mean_cum / self.ks


def _group_key(res: RunResult):
    c = res.config
    eps = math.inf if c.effective_mechanism == "identity" else c.epsilon
    return c.algo, c.effective_mechanism, eps


def summarize(results: list[RunResult]) -> list[SweepSummary]:
    """Mean/min/max cumulative regret per (algo, mechanism, epsilon) group."""
    groups: dict = {}
    for res in results:
        groups.setdefault(_group_key(res), []).append(res)
    out = []
    for (algo, mech, eps), runs in groups.items():
        ks = runs[0].ks
        if any(not np.array_equal(r.ks, ks) for r in runs):
            raise ValueError("runs in one group recorded different checkpoints")
        cum = np.stack([r.cum_regret for r in runs])
        out.append(SweepSummary(algo, mech, eps, ks, cum.mean(axis=0), cum.min(axis=0), cum.max(axis=0), len(runs)))
    return out


# --- statistic dumps --------------------------------------------------------


@njit(cache=True)
def _dump_loop(p, r, bernoulli, rho0, H, K, alpha, delta, kinds, params, traj_gen, mech_gen, t_R, t_Nr, t_Np, q_R, q_Nr, q_Np):
    """UCB-VI on exact counts for K episodes, privatizing every trajectory once per mechanism."""
    S, A = r.shape
    R, Nr, R2 = np.empty((S, A)), np.empty((S, A)), np.empty((S, A))
    Np = np.empty((S, A, S))
    states = np.empty(H, dtype=np.int64)
    actions = np.empty(H, dtype=np.int64)
    rewards = np.empty(H)
    for k in range(1, K + 1):
        _, _, _, pi = _optimistic_plan(t_R, t_Nr, t_Np, float(k), alpha, delta, 1.0, 1.0, 1.0, 1.0, H)
        _sample_trajectory(traj_gen, p, r, bernoulli, rho0, pi, states, actions, rewards)
        _trajectory_stats(states, actions, rewards, R, Nr, Np, R2)
        t_R += R
        t_Nr += Nr
        t_Np += Np
        for m in range(kinds.shape[0]):
            _privatize(mech_gen, kinds[m], params[m], False, states, actions, rewards, R, Nr, Np, R2)
            q_R[m] += R
            q_Nr[m] += Nr
            q_Np[m] += Np


STAT_COLUMNS = ("mechanism", "epsilon", "entry_kind", "s", "a", "s_next", "true_value", "private_value", "repeat")


def _stat_rows(prefix, mech, eps, repeat, true, priv):
    """Long-format rows for every entry of one (true, private) statistics pair."""
    (tR, tNr, tNp), (qR, qNr, qNp) = true, priv
    S, A = tR.shape
    rows = []
    for s in range(S):
        for a in range(A):
            rows.append((mech, eps, f"{prefix}_reward", s, a, "", tR[s, a], qR[s, a], repeat))
            rows.append((mech, eps, f"{prefix}_visits", s, a, "", tNr[s, a], qNr[s, a], repeat))
            for t in range(S):
                rows.append((mech, eps, f"{prefix}_transition", s, a, t, tNp[s, a, t], qNp[s, a, t], repeat))
    return rows


def default_trajectory_pair(H: int, S: int, A: int) -> tuple[Trajectory, Trajectory]:
    """Two maximally different trajectories: all-reward at (0, A-1) versus none elsewhere."""
    x = Trajectory(np.zeros(H, dtype=np.int64), np.full(H, A - 1, dtype=np.int64), np.ones(H))
    x2 = Trajectory(np.full(H, S - 1, dtype=np.int64), np.zeros(H, dtype=np.int64), np.zeros(H))
    return x, x2


def export_stat_samples(
    cfg: RunConfig,
    n_repeats: int,
    epsilons=(0.2, 2.0, 20.0),
    pair: tuple[Trajectory, Trajectory] | None = None,
) -> list[tuple]:
    """Rows of (true, privatized) statistics for histogramming.

    Each repeat runs the non-private baseline for ``cfg.K`` episodes and
    privatizes every trajectory under ``cfg.mechanism`` at each epsilon, so
    the aggregates of all epsilons share the same underlying data
    (``agg_*`` rows). Then two fixed trajectories are privatized
    ``n_repeats`` times each (``traj1_*`` / ``traj2_*`` rows).
    """
    if n_repeats < 1:
        raise ValueError("n_repeats must be at least 1")
    env_rng, _, mech_rng, traj_rng = _streams(cfg.seed)
    mdp = make_env(cfg, env_rng)
    S, A, H = mdp.S, mdp.A, mdp.H
    mechs = [dataclasses.replace(cfg, epsilon=float(e), algo="obi").mechanism_config(S, A, H) for e in epsilons]
    kinds = np.array([m.code for m in mechs], dtype=np.int64)
    params = np.stack([m.kernel_params() for m in mechs])
    rows = []
    for rep in range(n_repeats):
        t_R, t_Nr, t_Np = np.zeros((S, A)), np.zeros((S, A)), np.zeros((S, A, S))
        n = len(mechs)
        q_R, q_Nr, q_Np = np.zeros((n, S, A)), np.zeros((n, S, A)), np.zeros((n, S, A, S))
        _dump_loop(mdp.p, mdp.r, mdp.bernoulli_rewards, mdp.rho0, H, cfg.K, cfg.alpha, cfg.delta,
                   kinds, params, traj_rng, mech_rng, t_R, t_Nr, t_Np, q_R, q_Nr, q_Np)  # fmt: skip
        for m, mc in enumerate(mechs):
            rows += _stat_rows("agg", mc.kind, mc.epsilon, rep, (t_R, t_Nr, t_Np), (q_R[m], q_Nr[m], q_Np[m]))
    x1, x2 = default_trajectory_pair(H, S, A) if pair is None else pair
    for mc in mechs:
        for label, x in (("traj1", x1), ("traj2", x2)):
            st = trajectory_stats(x, S, A)
            for rep in range(n_repeats):
                ps = privatize(mc, x, mech_rng)
                rows += _stat_rows(label, mc.kind, mc.epsilon, rep, (st.R, st.Nr, st.Np), (ps.R, ps.Nr, ps.Np))
    return rows


# --- CSV output -------------------------------------------------------------

RUN_COLUMNS = ("algo", "mechanism", "epsilon", "delta", "alpha", "seed", "k", "cum_regret", "per_step_regret")
SUMMARY_COLUMNS = ("algo", "mechanism", "epsilon", "k", "mean_cum", "min_cum", "max_cum")


def _write(path, columns, rows, echo: dict | None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        if echo is not None:
            fh.write("# config: " + json.dumps(echo, sort_keys=True) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([v if isinstance(v, str) else fmt(v) for v in row])
    return path


def write_runs_csv(path, results: list[RunResult], echo: dict | None = None) -> Path:
    rows = []
    for res in results:
        c = res.config
        _, mech, eps = _group_key(res)
        for k, cum, ps in zip(res.ks, res.cum_regret, res.per_step_regret):
            rows.append((c.algo, mech, eps, c.delta, c.alpha, c.seed, k, cum, ps))
    return _write(path, RUN_COLUMNS, rows, echo)


def write_summary_csv(path, summaries: list[SweepSummary], echo: dict | None = None) -> Path:
    rows = []
    for sm in summaries:
        for i, k in enumerate(sm.ks):
            rows.append((sm.algo, sm.mechanism, sm.epsilon, k, sm.mean_cum[i], sm.min_cum[i], sm.max_cum[i]))
    return _write(path, SUMMARY_COLUMNS, rows, echo)


def write_stats_csv(path, rows: list[tuple], echo: dict | None = None) -> Path:
    return _write(path, STAT_COLUMNS, rows, echo)
