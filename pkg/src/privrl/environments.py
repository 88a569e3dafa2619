"""Benchmark and hard-instance MDP generators, plus the regret lower-bound curve."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .mdp import MdpSpec
from .sampling import dirichlet

__all__ = ["random_mdp", "hard_tree_mdp", "TreeLayout", "tree_layout", "ldp_lower_bound", "LowerBound"]


def random_mdp(S: int, A: int, H: int, alpha: float, rng: np.random.Generator) -> MdpSpec:
    """RandomMDP: Dirichlet(alpha) transition rows and deterministic {0, 1} rewards.

    Each row ``p(.|s, a)`` is drawn first (state-major order), then the
    reward thresholds ``U[s, a] ~ Uniform[0, 1]`` with ``r = 1{U <= 0.5}``.
    """
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    conc = np.full(S, float(alpha))
    p = np.empty((S, A, S))
    for s in range(S):
        for a in range(A):
            dirichlet(rng, conc, p[s, a])
    # renormalize so rows meet the 1e-12 sum check exactly
    p /= p.sum(axis=2, keepdims=True)
    u = rng.random((S, A))
    r = (u <= 0.5).astype(float)
    return MdpSpec(p=p, r=r, H=H, reward_kind="deterministic")


@dataclass(frozen=True)
class TreeLayout:
    """Breadth-first layout of the hard tree instance.

    ``children[i]`` lists the child indices of internal node ``i``; ``leaves``
    are the childless tree nodes in index order; ``depth`` is the number of
    steps from the root to the absorbing pair (+/-) through the deepest leaf.
    """

    n_nodes: int
    children: tuple
    leaves: tuple
    node_depth: tuple
    depth: int

    @property
    def plus(self) -> int:
        return self.n_nodes

    @property
    def minus(self) -> int:
        return self.n_nodes + 1


def tree_layout(S: int, A: int) -> TreeLayout:
    n = S - 2
    children = tuple(tuple(range(A * i + 1, min(A * i + A, n - 1) + 1)) for i in range(n))
    node_depth = [0] * n
    for i in range(1, n):
        node_depth[i] = node_depth[(i - 1) // A] + 1
    leaves = tuple(i for i in range(n) if not children[i])
    depth = max(node_depth[i] for i in leaves) + 1
    return TreeLayout(n, children, leaves, tuple(node_depth), depth)


def hard_tree_mdp(
    S: int,
    A: int,
    H: int,
    delta_gap: float,
    star_leaf: int = 0,
    star_action: int = 0,
) -> MdpSpec:
    """A-ary tree over ``S - 2`` nodes whose leaves feed two absorbing states.

    Nodes are filled level by level, left to right; the absorbing ``+``
    (reward 1) and ``-`` (reward 0) states take the last two indices. Every
    leaf moves to ``+`` or ``-`` with probability 1/2, except
    ``(leaves[star_leaf], star_action)`` which reaches ``+`` with probability
    ``1/2 + delta_gap``. An internal node with fewer than ``A`` children
    routes the surplus actions to its last child.
    """
    if S < 3:
        raise ValueError("need S >= 3")
    if A < 2:
        raise ValueError("need A >= 2")
    if H < 2 * math.log(S - 2) / math.log(A) + 2 - 1e-9:
        raise ValueError(f"horizon H={H} too short; need H >= 2 log_A(S - 2) + 2")
    if not 0 <= delta_gap < 0.5:
        raise ValueError("delta_gap must lie in [0, 1/2)")
    layout = tree_layout(S, A)
    if not 0 <= star_leaf < len(layout.leaves):
        raise ValueError(f"star_leaf must lie in 0..{len(layout.leaves) - 1}")
    if not 0 <= star_action < A:
        raise ValueError(f"star_action must lie in 0..{A - 1}")

    plus, minus = layout.plus, layout.minus
    p = np.zeros((S, A, S))
    r = np.zeros((S, A))
    for i in range(layout.n_nodes):
        kids = layout.children[i]
        for a in range(A):
            if kids:
                p[i, a, kids[min(a, len(kids) - 1)]] = 1.0
            else:
                p[i, a, plus] = 0.5
                p[i, a, minus] = 0.5
    star = layout.leaves[star_leaf]
    p[star, star_action, plus] = 0.5 + delta_gap
    p[star, star_action, minus] = 0.5 - delta_gap
    p[plus, :, plus] = 1.0
    p[minus, :, minus] = 1.0
    r[plus, :] = 1.0
    rho0 = np.zeros(S)
    rho0[0] = 1.0
    return MdpSpec(p=p, r=r, H=H, reward_kind="deterministic", rho0=rho0)


@dataclass(frozen=True)
class LowerBound:
    reference: float
    explicit: float | None


def ldp_lower_bound(S: int, A: int, H: int, K: int, epsilon: float) -> LowerBound:
    """Regret lower-bound curve ``H sqrt(SAK) / min(e^eps - 1, 1)``.

    ``explicit`` is the constant-carrying variant
    ``(H - d) sqrt(K L A) / (64 min(e^eps - 1, 1/2))`` computed on the tree
    instance (``d`` its depth, ``L`` its leaf count); it is ``None`` when the
    tree instance is undefined for these sizes.
    """
    if min(S, A, H, K) <= 0 or epsilon <= 0:
        raise ValueError("S, A, H, K and epsilon must be positive")
    reference = H * math.sqrt(S * A * K) / min(math.expm1(epsilon), 1.0)
    explicit = None
    if S >= 3 and A >= 2:
        layout = tree_layout(S, A)
        leaves = len(layout.leaves)
        explicit = (H - layout.depth) * math.sqrt(K * leaves * A) / (64 * min(math.expm1(epsilon), 0.5))
    return LowerBound(reference, explicit)
