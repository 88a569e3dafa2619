"""Regret minimization in tabular finite-horizon MDPs under local differential privacy."""

from .agents import ObiAgent, ObiConfig, PosteriorParams, PsrlAgent, UcbViAgent, obi_plan, psrl_plan, psrl_update
from .environments import hard_tree_mdp, ldp_lower_bound, random_mdp
from .harness import RunConfig, RunResult, run_episode_loop, summarize, sweep
from .mdp import MdpSpec, Trajectory, episode_regret, optimal_plan, policy_value, sample_trajectory, trajectory_stats
from .randomizers import AggregatedStats, MechanismConfig, PrivateStats, aggregate, precision, privatize

__version__ = "0.1.0"

__all__ = [
    "MdpSpec",
    "Trajectory",
    "optimal_plan",
    "policy_value",
    "episode_regret",
    "sample_trajectory",
    "trajectory_stats",
    "random_mdp",
    "hard_tree_mdp",
    "ldp_lower_bound",
    "MechanismConfig",
    "PrivateStats",
    "AggregatedStats",
    "privatize",
    "precision",
    "aggregate",
    "ObiConfig",
    "ObiAgent",
    "UcbViAgent",
    "PsrlAgent",
    "PosteriorParams",
    "obi_plan",
    "psrl_update",
    "psrl_plan",
    "RunConfig",
    "RunResult",
    "run_episode_loop",
    "sweep",
    "summarize",
]
