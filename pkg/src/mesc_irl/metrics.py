"""False-positive rates, KL to demonstrations and mean reward."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .maxent import SoftPolicy, rollout, soft_backward, trajectory_log_prob
from .mdp import DemoSet, TabularMdp
from .probability import ConstraintReport, PenaltyScale, pooled_std, transition_constraint_prob


@dataclass(frozen=True, eq=False)
class GroundTruth:
    """Ground-truth constraint costs and the constraint probabilities they imply.

    ``feature_costs`` is a length-k vector of nonpositive costs; the
    transition arrays are |S|x|A|x|S| with NaN on infeasible transitions.
    """

    feature_costs: np.ndarray
    feature_zeta: np.ndarray
    transition_costs: np.ndarray
    transition_zeta: np.ndarray
    scale: PenaltyScale

    def true_weights(self, mdp: TabularMdp) -> np.ndarray:
        return mdp.nominal_weights + self.feature_costs

    def constrained_items(self, level: str = "feature") -> set[tuple]:
        out: set[tuple] = set()
        if level in ("feature", "both"):
            out |= {("feature", int(i)) for i in np.flatnonzero(self.feature_costs < 0)}
        if level in ("transition", "both"):
            with np.errstate(invalid="ignore"):
                hits = np.argwhere(self.transition_costs < 0)
            out |= {("transition", int(s), int(a), int(s2)) for s, a, s2 in hits}
        return out

    def cost_of(self, item: tuple) -> float:
        if item[0] == "feature":
            return float(self.feature_costs[item[1]])
        return float(self.transition_costs[item[1:]])


def ground_truth(mdp: TabularMdp, feature_costs: np.ndarray) -> GroundTruth:
    costs = np.asarray(feature_costs, dtype=float)
    if costs.shape != (mdp.num_features,):
        raise ValueError("feature_costs must have one entry per feature")
    if np.any(costs > 0):
        raise ValueError("ground-truth costs must be nonpositive")
    nominal = mdp.nominal_weights
    scale = pooled_std(mdp, nominal, nominal + costs)
    tc = mdp.reward_table(costs).copy()
    tc[~mdp.feasible] = np.nan
    return GroundTruth(
        feature_costs=costs,
        feature_zeta=transition_constraint_prob(-costs, scale),
        transition_costs=tc,
        transition_zeta=transition_constraint_prob(-tc, scale),
        scale=scale,
    )


@dataclass
class EvalConfig:
    zeta_thresholds: list[float] = field(default_factory=lambda: [0.5, 0.6, 0.7])
    chis: list[float] = field(default_factory=lambda: [0.0, 0.1, 0.2])
    kl_sample_count: int = 0
    reward_episodes: int = 200
    # cost placed on every item flagged by a hard threshold when scoring the
    # thresholded model
    hard_penalty: float = 50.0
    level: str = "feature"

    def __post_init__(self):
        if not all(0.0 < z < 1.0 for z in self.zeta_thresholds):
            raise ValueError("zeta thresholds must lie in (0, 1)")
        if not all(0.0 <= c <= 1.0 for c in self.chis):
            raise ValueError("chi values must lie in [0, 1]")
        if self.kl_sample_count < 0 or self.reward_episodes < 1:
            raise ValueError("sample counts must be positive")
        if self.level not in ("feature", "transition", "both"):
            raise ValueError(f"unknown level {self.level!r}")


def _denominator(truth: GroundTruth, kinds: set[str]) -> int:
    level = "both" if len(kinds) > 1 else (next(iter(kinds)) if kinds else "feature")
    return max(1, len(truth.constrained_items(level)))


def false_positive_rate_hard(predicted: set[tuple], truth: GroundTruth) -> float:
    """Predicted items with zero true cost over the number of true constraints.

    Not clamped to 1.
    """
    if not predicted:
        return 0.0
    false = sum(1 for item in predicted if truth.cost_of(item) == 0)
    return false / _denominator(truth, {item[0] for item in predicted})


def false_positive_rate_soft(
    report: ConstraintReport, truth: GroundTruth, chi: float, level: str = "feature"
) -> float:
    """Unconstrained items whose predicted probability exceeds the true one by more than ``chi``."""
    count = 0
    if level in ("feature", "both"):
        free = truth.feature_costs == 0
        count += int(np.sum(free & (report.feature_zeta - truth.feature_zeta > chi)))
    if level in ("transition", "both"):
        with np.errstate(invalid="ignore"):
            free = truth.transition_costs == 0
            count += int(np.sum(free & (report.transition_zeta - truth.transition_zeta > chi)))
    kinds = {"feature", "transition"} if level == "both" else {level}
    return count / _denominator(truth, kinds)


def kl_to_demos(mdp: TabularMdp, weights: np.ndarray | SoftPolicy, demos: DemoSet) -> float:
    """Plug-in estimate of KL(empirical demo distribution || model).

    ``(1/|D|) sum_tau [log p_D(tau) - log p_model(tau)]`` where ``p_D`` is the
    empirical frequency of the exact transition sequence.
    """
    if len(demos) == 0:
        raise ValueError("demonstration set is empty")
    policy = weights if isinstance(weights, SoftPolicy) else soft_backward(mdp, weights)
    freq = Counter(tau.transitions for tau in demos)
    n = len(demos)
    total = 0.0
    cache: dict[tuple, float] = {}
    for tau in demos:
        key = tau.transitions
        if key not in cache:
            cache[key] = trajectory_log_prob(mdp, policy, tau)
        total += np.log(freq[key] / n) - cache[key]
    return float(total / n)


def hard_constraint_weights(
    mdp: TabularMdp, predicted: set[tuple], penalty: float, base: np.ndarray | None = None
) -> np.ndarray:
    """Nominal weights with ``penalty`` subtracted at every flagged feature."""
    w = np.array(mdp.nominal_weights if base is None else base, dtype=float)
    for item in predicted:
        if item[0] != "feature":
            raise ValueError("only feature-level items can be imposed as weights")
        w[item[1]] -= penalty
    return w


def trajectory_reward(mdp: TabularMdp, weights: np.ndarray, tau) -> float:
    table = mdp.reward_table(weights)
    return float(sum(mdp.discount**t * table[s, a, s2] for t, (s, a, s2) in enumerate(tau)))


def mean_reward(
    mdp: TabularMdp, policy: SoftPolicy, true_weights: np.ndarray, episodes: int, seed: int
) -> float:
    """Monte Carlo estimate of the expected ground-truth return of ``policy``."""
    if episodes < 1:
        raise ValueError("episodes must be at least 1")
    table = mdp.reward_table(true_weights)
    trajs = rollout(mdp, policy, episodes, np.random.default_rng(seed))
    gamma = mdp.discount
    returns = [
        sum(gamma**t * table[s, a, s2] for t, (s, a, s2) in enumerate(tau)) for tau in trajs
    ]
    return float(np.mean(returns))


def expected_reward(mdp: TabularMdp, policy: SoftPolicy, true_weights: np.ndarray) -> float:
    """Exact expected return by forward propagation of the state distribution."""
    P = mdp.transition
    S, A, _ = P.shape
    table = mdp.reward_table(true_weights)
    r_sa = np.einsum("ijk,ijk->ij", P, table)
    rho = np.array(mdp.start, dtype=float)
    total = 0.0
    for t in range(policy.horizon):
        sa = rho[:, None] * policy.pi[t]
        total += mdp.discount**t * float(np.sum(sa * r_sa))
        rho = sa.reshape(-1) @ P.reshape(S * A, S)
    return total
