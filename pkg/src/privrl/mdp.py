"""Finite-horizon tabular MDPs: representation, planning, evaluation, sampling.

Steps are indexed from 0 internally, so a policy or Q table has shape
``(H, S)`` / ``(H, S, A)`` and row ``h`` corresponds to decision step
``h + 1``. Value tables carry an extra terminal row of zeros.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numba import njit

from .sampling import categorical

__all__ = [
    "MdpSpec",
    "ValueTables",
    "Trajectory",
    "TrajectoryStats",
    "optimal_plan",
    "policy_value",
    "episode_regret",
    "sample_trajectory",
    "trajectory_stats",
    "check_policy",
]

REWARD_KINDS = ("deterministic", "bernoulli")
PROB_TOL = 1e-12


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class MdpSpec:
    """Tabular MDP with stationary transitions ``p[s, a, s']`` and mean rewards ``r[s, a]``."""

    p: np.ndarray
    r: np.ndarray
    H: int
    reward_kind: str = "deterministic"
    rho0: np.ndarray | None = None

    def __post_init__(self):
        p = _frozen(self.p)
        r = _frozen(self.r)
        if p.ndim != 3 or p.shape[0] != p.shape[2]:
            raise ValueError(f"transitions must have shape (S, A, S), got {p.shape}")
        S, A, _ = p.shape
        if S < 1 or A < 1:
            raise ValueError("need at least one state and one action")
        if r.shape != (S, A):
            raise ValueError(f"mean rewards must have shape {(S, A)}, got {r.shape}")
        if int(self.H) != self.H or self.H < 1:
            raise ValueError(f"horizon must be a positive integer, got {self.H}")
        if self.reward_kind not in REWARD_KINDS:
            raise ValueError(f"reward_kind must be one of {REWARD_KINDS}, got {self.reward_kind!r}")
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise ValueError("transition probabilities must be finite and nonnegative")
        row_err = np.abs(p.sum(axis=2) - 1.0).max()
        if row_err > PROB_TOL:
            raise ValueError(f"transition rows must sum to 1 (max error {row_err:.3g})")
        if np.any(r < 0) or np.any(r > 1) or not np.all(np.isfinite(r)):
            raise ValueError("mean rewards must lie in [0, 1]")
        rho0 = np.full(S, 1.0 / S) if self.rho0 is None else self.rho0
        rho0 = _frozen(rho0)
        if rho0.shape != (S,) or np.any(rho0 < 0):
            raise ValueError("initial state distribution must be a nonnegative vector of length S")
        if abs(rho0.sum() - 1.0) > PROB_TOL:
            raise ValueError("initial state distribution must sum to 1")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "rho0", rho0)
        object.__setattr__(self, "H", int(self.H))

    @property
    def S(self) -> int:
        return self.p.shape[0]

    @property
    def A(self) -> int:
        return self.p.shape[1]

    def to_dict(self) -> dict:
        return {
            "S": self.S,
            "A": self.A,
            "H": self.H,
            "p": self.p.tolist(),
            "r": self.r.tolist(),
            "reward_kind": self.reward_kind,
            "rho0": self.rho0.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MdpSpec":
        known = {"S", "A", "H", "p", "r", "reward_kind", "rho0"}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown MDP keys: {sorted(extra)}")
        mdp = cls(
            p=d["p"],
            r=d["r"],
            H=d["H"],
            reward_kind=d.get("reward_kind", "deterministic"),
            rho0=d.get("rho0"),
        )
        if ("S" in d and d["S"] != mdp.S) or ("A" in d and d["A"] != mdp.A):
            raise ValueError("declared S/A do not match array shapes")
        return mdp

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "MdpSpec":
        return cls.from_dict(json.loads(text))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "MdpSpec":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))

    @property
    def bernoulli_rewards(self) -> bool:
        return self.reward_kind == "bernoulli"


@dataclass(frozen=True, eq=False)
class ValueTables:
    """Q of shape (H, S, A) and V of shape (H + 1, S) with ``V[H] == 0``."""

    Q: np.ndarray
    V: np.ndarray


@dataclass(frozen=True, eq=False)
class Trajectory:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray

    def __len__(self):
        return len(self.states)

    @property
    def steps(self):
        return list(zip(self.states.tolist(), self.actions.tolist(), self.rewards.tolist()))

    @classmethod
    def from_steps(cls, steps) -> "Trajectory":
        steps = list(steps)
        if not steps:
            raise ValueError("a trajectory needs at least one step")
        s, a, r = zip(*steps)
        return cls(
            np.asarray(s, dtype=np.int64),
            np.asarray(a, dtype=np.int64),
            np.asarray(r, dtype=float),
        )


@dataclass(frozen=True, eq=False)
class TrajectoryStats:
    """Per-episode counters: reward sums, visits, transitions, squared reward sums."""

    R: np.ndarray
    Nr: np.ndarray
    Np: np.ndarray
    R2: np.ndarray


# --- compiled kernels -------------------------------------------------------


@njit(cache=True)
def _backward_induction(p, r, bonus, H, truncate):
    S, A = r.shape
    Q = np.zeros((H, S, A))
    V = np.zeros((H + 1, S))
    pi = np.zeros((H, S), dtype=np.int64)
    for h in range(H - 1, -1, -1):
        cap = float(H - h)
        for s in range(S):
            best = -np.inf
            arg = 0
            for a in range(A):
                q = r[s, a] + bonus[h, s, a]
                for t in range(S):
                    q += p[s, a, t] * V[h + 1, t]
                Q[h, s, a] = q
                if q > best:
                    best = q
                    arg = a
            pi[h, s] = arg
            if truncate and best > cap:
                best = cap
            V[h, s] = best
    return Q, V, pi


@njit(cache=True)
def _policy_value(p, r, pi, H):
    S, A = r.shape
    Q = np.zeros((H, S, A))
    V = np.zeros((H + 1, S))
    for h in range(H - 1, -1, -1):
        for s in range(S):
            for a in range(A):
                q = r[s, a]
                for t in range(S):
                    q += p[s, a, t] * V[h + 1, t]
                Q[h, s, a] = q
            V[h, s] = Q[h, s, pi[h, s]]
    return Q, V


@njit(cache=True)
def _initial_value(p, r, pi, H, s1):
    # V^pi_1(s1) without materializing Q
    S = r.shape[0]
    v = np.zeros(S)
    w = np.zeros(S)
    for h in range(H - 1, -1, -1):
        for s in range(S):
            a = pi[h, s]
            q = r[s, a]
            for t in range(S):
                q += p[s, a, t] * v[t]
            w[s] = q
        for s in range(S):
            v[s] = w[s]
    return v[s1]


@njit(cache=True)
def _sample_trajectory(gen, p, r, bernoulli, rho0, pi, states, actions, rewards):
    H = states.shape[0]
    s = categorical(gen, rho0)
    for h in range(H):
        a = pi[h, s]
        states[h] = s
        actions[h] = a
        if bernoulli:
            rewards[h] = 1.0 if gen.random() < r[s, a] else 0.0
        else:
            rewards[h] = r[s, a]
        if h < H - 1:
            s = categorical(gen, p[s, a])


@njit(cache=True)
def _trajectory_stats(states, actions, rewards, R, Nr, Np, R2):
    R[:] = 0.0
    Nr[:] = 0.0
    Np[:] = 0.0
    R2[:] = 0.0
    H = states.shape[0]
    for h in range(H):
        s = states[h]
        a = actions[h]
        R[s, a] += rewards[h]
        R2[s, a] += rewards[h] * rewards[h]
        Nr[s, a] += 1.0
        if h < H - 1:
            Np[s, a, states[h + 1]] += 1.0


# --- public API -------------------------------------------------------------


def check_policy(pi, S: int, A: int, H: int) -> np.ndarray:
    pi = np.asarray(pi)
    if pi.shape != (H, S):
        raise ValueError(f"policy must have shape {(H, S)}, got {pi.shape}")
    if not np.issubdtype(pi.dtype, np.integer):
        if not np.all(pi == np.round(pi)):
            raise ValueError("policy entries must be integer action indices")
    pi = pi.astype(np.int64)
    if pi.size and (pi.min() < 0 or pi.max() >= A):
        raise ValueError(f"policy entries must lie in 0..{A - 1}")
    return pi


def optimal_plan(mdp: MdpSpec) -> tuple[ValueTables, np.ndarray]:
    """Exact optimal values and a greedy policy (ties go to the lowest action)."""
    bonus = np.zeros((mdp.H, mdp.S, mdp.A))
    Q, V, pi = _backward_induction(mdp.p, mdp.r, bonus, mdp.H, False)
    return ValueTables(Q, V), pi


def policy_value(mdp: MdpSpec, pi) -> ValueTables:
    pi = check_policy(pi, mdp.S, mdp.A, mdp.H)
    Q, V = _policy_value(mdp.p, mdp.r, pi, mdp.H)
    return ValueTables(Q, V)


def episode_regret(mdp: MdpSpec, pi, s1: int) -> float:
    """``V*_1(s1) - V^pi_1(s1)`` from exact value tables."""
    pi = check_policy(pi, mdp.S, mdp.A, mdp.H)
    if not 0 <= s1 < mdp.S:
        raise ValueError(f"state {s1} out of range")
    vstar, _ = optimal_plan(mdp)
    return float(vstar.V[0, s1] - _initial_value(mdp.p, mdp.r, pi, mdp.H, s1))


def sample_trajectory(mdp: MdpSpec, pi, rng: np.random.Generator) -> Trajectory:
    pi = check_policy(pi, mdp.S, mdp.A, mdp.H)
    states = np.empty(mdp.H, dtype=np.int64)
    actions = np.empty(mdp.H, dtype=np.int64)
    rewards = np.empty(mdp.H)
    _sample_trajectory(rng, mdp.p, mdp.r, mdp.bernoulli_rewards, mdp.rho0, pi, states, actions, rewards)
    return Trajectory(states, actions, rewards)


def trajectory_stats(x: Trajectory, S: int, A: int) -> TrajectoryStats:
    states = np.asarray(x.states, dtype=np.int64)
    actions = np.asarray(x.actions, dtype=np.int64)
    rewards = np.asarray(x.rewards, dtype=float)
    if states.size and (states.min() < 0 or states.max() >= S):
        raise IndexError(f"trajectory visits a state outside 0..{S - 1}")
    if actions.size and (actions.min() < 0 or actions.max() >= A):
        raise IndexError(f"trajectory uses an action outside 0..{A - 1}")
    R = np.zeros((S, A))
    Nr = np.zeros((S, A))
    Np = np.zeros((S, A, S))
    R2 = np.zeros((S, A))
    _trajectory_stats(states, actions, rewards, R, Nr, Np, R2)
    return TrajectoryStats(R, Nr, Np, R2)
