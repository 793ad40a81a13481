"""Learning soft constraint penalties in gridworld MDPs from demonstrations."""

from .learner import LearnConfig, LearnResult, LearnerDivergence, likelihood_gradient, mesc_irl
from .maxent import forward_visitation, rollout, soft_backward, trajectory_log_prob
from .mdp import GridSpec, InvalidSpecError, TabularMdp, Trajectory, build_gridworld, reward
from .probability import binarize, constraint_report, pooled_std, transition_constraint_prob

__all__ = [
    "GridSpec",
    "InvalidSpecError",
    "LearnConfig",
    "LearnResult",
    "LearnerDivergence",
    "TabularMdp",
    "Trajectory",
    "binarize",
    "build_gridworld",
    "constraint_report",
    "forward_visitation",
    "likelihood_gradient",
    "mesc_irl",
    "pooled_std",
    "reward",
    "rollout",
    "soft_backward",
    "trajectory_log_prob",
    "transition_constraint_prob",
]
